"""Command-line entry point: ``tsadw <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .codec import DatasetFormatError, load_dataset, save_dataset
from .phasor import Dataset, NormalizationStats, split_dataset

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("tsadw")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _fail(code, kind, message):
    print(json.dumps({"error": kind, "code": code, "message": message}, sort_keys=True), file=sys.stderr)
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_CONFIG, "usage", message)


def _common(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, help="base seed for every random stage")
    p.add_argument("--out", default="tsadw-run", help="run directory")
    p.add_argument("--phi", type=float, help="known-fraction gate for the main block")
    p.add_argument("--shift-ms", type=float, dest="shift_ms", help="delay shift in ms")
    p.add_argument("--jobs", type=int, help="worker processes (0 = all cores)")
    p.add_argument("--force", action="store_true", help="overwrite existing artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsadw", description="Delay-aware transient stability assessment")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("gen-data", help="simulate the N-2 contingency corpus")
    _common(p)
    p = sub.add_parser("train", help="split, allocate PMUs, train blocks, fit thresholds")
    _common(p)
    p.add_argument("--data", help="dataset file (default: <out>/<data.dataset>)")
    p = sub.add_parser("optimize", help="re-run PMU allocation and threshold search on a trained suite")
    _common(p)
    p.add_argument("--data", help="dataset file (default: <out>/<data.dataset>)")
    p = sub.add_parser("bench", help="benchmark delay-aware vs synchronous assessment")
    _common(p)
    p.add_argument("--data", help="dataset file (default: <out>/<data.dataset>)")
    p.add_argument("--thresholds", help="alternative thresholds.json from `optimize`")
    p = sub.add_parser("export-curves", help="response-time CDF curves from a bench report")
    _common(p)
    p.add_argument("--report", help="bench directory or rows.csv (default: <out>/bench)")
    p = sub.add_parser("selftest", help="run the quick property checks")
    _common(p)
    return parser


def _config(args):
    from .pipeline import PipelineConfig

    cfg = PipelineConfig.from_toml(args.config) if args.config else PipelineConfig.default()
    return cfg.with_overrides(args.seed, args.phi, args.shift_ms, args.jobs)


def _claim(paths, force):
    """Refuse to touch existing artifacts unless forced."""
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise CliError(EXIT_CONFIG, "exists", f"refusing to overwrite {existing[0]} (use --force)")


def _dataset_path(args, cfg) -> Path:
    return Path(args.data) if getattr(args, "data", None) else Path(args.out) / cfg.data["data"]["dataset"]


def _load(path) -> Dataset:
    if not Path(path).exists():
        raise CliError(EXIT_MISSING, "missing_artifact", f"dataset {path} not found")
    return load_dataset(path)


def _split(args, cfg):
    """Rebuild the train/test split recorded by `train`."""
    ds = _load(_dataset_path(args, cfg))
    split_file = Path(args.out) / "split.json"
    if not split_file.exists():
        raise CliError(EXIT_MISSING, "missing_artifact", f"missing artifact {split_file}")
    split = json.loads(split_file.read_text())
    by_id = {c.id: c for c in ds.cases}
    try:
        train = [by_id[i] for i in split["train"]]
        test = [by_id[i] for i in split["test"]]
    except KeyError as exc:
        raise CliError(EXIT_CONFIG, "split_mismatch", f"case {exc} of split.json not in the dataset") from None
    stats = NormalizationStats.from_cases(train)
    return Dataset(train, stats, ds.frame_rate), Dataset(test, stats, ds.frame_rate)


def cmd_gen_data(args, cfg):
    from .pipeline import manifest, write_json
    from .simulate import generate_dataset

    out = Path(args.out)
    target = _dataset_path(args, cfg)
    man = out / "manifest-gen-data.json"
    _claim([target, man], args.force)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(cfg.grid(), cfg.datagen())
    save_dataset(ds, target)
    labels = ds.labels
    write_json(man, manifest("gen-data", cfg, dataset=str(target), n_cases=len(ds),
                             n_stable=int(labels.sum())))
    print(f"wrote {len(ds)} cases ({int(labels.sum())} stable) to {target}")


def cmd_train(args, cfg):
    from .pipeline import manifest, save_suite, train_suite, write_json

    out = Path(args.out)
    arts = [out / n for n in ("suite.json", "thresholds.json", "allocation.json", "split.json",
                              "manifest-train.json")]
    _claim(arts, args.force)
    ds = _load(_dataset_path(args, cfg))
    train, test = split_dataset(ds, float(cfg.data["data"]["split_ratio"]), cfg.seed("split"))
    suite, allocations, info = train_suite(train, cfg)
    save_suite(suite, out)
    write_json(out / "allocation.json", _allocation_json(allocations))
    write_json(out / "split.json", {"seed": cfg.seed("split"), "train": [c.id for c in train.cases],
                                    "test": [c.id for c in test.cases]})
    write_json(out / "manifest-train.json", manifest("train", cfg, training=info))
    print(f"trained {len(suite.blocks)} blocks on {len(train)} cases; artifacts in {out}")


def _allocation_json(allocations) -> list:
    return [{"N": N, "sets": [list(s) for s in r.allocation.sets], "objective": r.objective,
             "seed": r.seed} for N, r in sorted(allocations.items())]


def cmd_optimize(args, cfg):
    from .decision import optimize_thresholds
    from .pipeline import allocate, block_outputs, load_suite, manifest, write_json

    out = Path(args.out) / f"optimize-seed{cfg.data['run']['seed']}"
    arts = [out / n for n in ("allocation.json", "thresholds.json", "manifest.json")]
    _claim(arts, args.force)
    suite = _suite(args)
    train, _ = _split(args, cfg)
    _, allocations = allocate(cfg, cfg.grid())
    omega = float(cfg.data["assessment"]["omega"])
    schedules = []
    for b in suite.blocks:
        outputs = block_outputs(b.network, b.spec, train, suite.stats)
        schedules.append(optimize_thresholds(outputs, train.labels, omega, cfg.metaheuristic("thresholds"),
                                             b.block_id).to_dict())
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "allocation.json", _allocation_json(allocations))
    write_json(out / "thresholds.json", schedules)
    write_json(out / "manifest.json", manifest("optimize", cfg))
    print(f"wrote allocation and thresholds to {out}")


def _suite(args, phi=None):
    from .pipeline import load_suite

    return load_suite(args.out, phi)


def cmd_bench(args, cfg):
    from .decision import ThresholdSchedule
    from .pipeline import manifest, write_json
    from .runtime import benchmark_dataset, default_mechanisms

    out = Path(args.out) / "bench"
    arts = [out / n for n in ("report.json", "rows.csv", "cdf.csv", "manifest.json")]
    _claim(arts, args.force)
    suite = _suite(args, cfg.phi)
    if args.thresholds:
        if not Path(args.thresholds).exists():
            raise CliError(EXIT_MISSING, "missing_artifact", f"thresholds {args.thresholds} not found")
        sched = {d["block_id"]: ThresholdSchedule.from_dict(d)
                 for d in json.loads(Path(args.thresholds).read_text())}
        for b in suite.blocks:
            b.schedule = sched.get(b.block_id, b.schedule)
    _, test = _split(args, cfg)
    b = cfg.data["bench"]
    noise = cfg.noise_model()
    mechs = default_mechanisms(tuple(float(p) for p in b["phis"]), noisy=noise is not None)
    report = benchmark_dataset(suite, test, cfg.delay_model(), noise, int(b["repetitions"]), mechs,
                               int(b["D_cycles"]), cfg.jobs, float(b["inference_cost_ms"]))
    report.save(out)
    write_json(out / "manifest.json", manifest("bench", cfg))
    s = report.summary()
    for m, v in s["mechanisms"].items():
        print(f"{m:>22s}  acc {v['accuracy']:.4f}  avg {v['average_ms']:.2f} ms  "
              f"best {v['best_ms']:.2f}  worst {v['worst_ms']:.2f}")
    if "response_ratio" in s:
        print(f"delay-aware / synchronous average response: {s['response_ratio']:.3f}")


def cmd_export_curves(args, cfg):
    from .pipeline import manifest, write_json
    from .runtime import cdf_from_rows, read_rows

    src = Path(args.report) if args.report else Path(args.out) / "bench"
    rows_path = src / "rows.csv" if src.is_dir() else src
    if not rows_path.exists():
        raise CliError(EXIT_MISSING, "missing_artifact", f"report {rows_path} not found")
    try:
        rows = read_rows(rows_path)
    except ValueError as exc:
        raise CliError(EXIT_RUNTIME, "parse_error", str(exc)) from None
    out = Path(args.out) / "curves"
    mechs = sorted({r["mechanism"] for r in rows})
    files = {m: out / f"cdf-{m.replace('+', '-')}.csv" for m in mechs}
    _claim(list(files.values()) + [out / "manifest.json"], args.force)
    out.mkdir(parents=True, exist_ok=True)
    for m, path in files.items():
        path.write_text(cdf_from_rows([r for r in rows if r["mechanism"] == m]))
    write_json(out / "manifest.json", manifest("export-curves", cfg, report=str(rows_path)))
    print(f"wrote {len(files)} curves to {out}")


def cmd_selftest(args, cfg):
    from .selftest import run_all

    results = run_all(seed=cfg.seed("split"))
    failed = [r for r in results if not r[1]]
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    if failed:
        raise CliError(EXIT_RUNTIME, "selftest_failed", f"{len(failed)} check(s) failed")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "optimize": cmd_optimize,
    "bench": cmd_bench,
    "export-curves": cmd_export_curves,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    level = os.environ.get("TSADW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    from .nn.checkpoint import CheckpointError
    from .pipeline import ConfigError, MissingArtifactError

    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except MissingArtifactError as exc:
        return _fail(EXIT_MISSING, "missing_artifact", str(exc))
    except (DatasetFormatError, CheckpointError) as exc:
        return _fail(EXIT_RUNTIME, "parse_error", str(exc))
    except Exception as exc:  # noqa: BLE001 - the exit code is the contract
        log.debug("runtime failure", exc_info=True)
        return _fail(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
