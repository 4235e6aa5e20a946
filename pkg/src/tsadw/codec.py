"""Dataset persistence: JSON-lines text format and the ``TSADW1`` binary format."""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .phasor import ContingencyCase, Dataset, MeasurementMatrix, NormalizationStats

FORMAT_VERSION = 1
MAGIC = b"TSADW1"


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


class DatasetVersionError(DatasetFormatError):
    """Dataset file written by an unsupported format version."""


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# --- text ---------------------------------------------------------------

def _stats_json(stats):
    if stats is None:
        return None
    return {"mean": stats.mean.tolist(), "std": stats.std.tolist()}


def write_jsonl(ds: Dataset, path) -> None:
    path = Path(path)
    header = {
        "format": "tsadw-jsonl",
        "version": FORMAT_VERSION,
        "frame_rate": ds.frame_rate,
        "n_cases": len(ds),
        "stats": _stats_json(ds.stats),
    }
    lines = [json.dumps(header)]
    for c in ds.cases:
        m = c.matrix
        rec = {
            "id": c.id,
            "label": c.label,
            "B": m.B,
            "T": m.T,
            "frames": [m.mag.tolist(), m.ang.tolist()],
            "meta": c.meta,
        }
        if not m.fully_known:
            rec["known"] = m.known.astype(int).tolist()
        lines.append(json.dumps(rec))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_jsonl(path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    rows = text.splitlines()
    if not rows:
        raise DatasetFormatError(f"{path}: line 1: missing header")
    try:
        header = json.loads(rows[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: line 1: {exc.msg}") from None
    if header.get("format") != "tsadw-jsonl":
        raise DatasetFormatError(f"{path}: line 1: not a tsadw-jsonl header")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetVersionError(
            f"{path}: format version {header.get('version')} unsupported (expected {FORMAT_VERSION})"
        )
    cases = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        try:
            rec = json.loads(row)
            B, T = int(rec["B"]), int(rec["T"])
            mag = np.array(rec["frames"][0], dtype=float).reshape(B, T)
            ang = np.array(rec["frames"][1], dtype=float).reshape(B, T)
            known = np.array(rec["known"], dtype=bool).reshape(B, T) if "known" in rec else np.ones((B, T), bool)
            cases.append(ContingencyCase(str(rec["id"]), MeasurementMatrix(mag, ang, known),
                                         int(rec["label"]), rec.get("meta", {})))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError, IndexError) as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
    if len(cases) != header.get("n_cases", len(cases)):
        raise DatasetFormatError(
            f"{path}: line {len(rows) + 1}: expected {header['n_cases']} cases, found {len(cases)}"
        )
    st = header.get("stats")
    stats = NormalizationStats(np.array(st["mean"]), np.array(st["std"])) if st else None
    return Dataset(cases, stats, float(header["frame_rate"]))


# --- binary -------------------------------------------------------------

def _pack_blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def write_binary(ds: Dataset, path) -> None:
    path = Path(path)
    header = json.dumps({"frame_rate": ds.frame_rate, "n_cases": len(ds)}).encode()
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), _pack_blob(header)]
    if ds.stats is None:
        parts.append(struct.pack("<I", 0))
    else:
        parts.append(struct.pack("<I", ds.stats.B))
        parts.append(ds.stats.mean.astype("<f8").tobytes())
        parts.append(ds.stats.std.astype("<f8").tobytes())
    for c in ds.cases:
        m = c.matrix
        parts.append(_pack_blob(c.id.encode()))
        parts.append(struct.pack("<BII", c.label, m.B, m.T))
        parts.append(_pack_blob(json.dumps(c.meta, sort_keys=True).encode()))
        parts.append(m.mag.astype("<f8").tobytes())
        parts.append(m.ang.astype("<f8").tobytes())
        parts.append(np.packbits(m.known.ravel(), bitorder="little").tobytes())
    _atomic_write(path, b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DatasetFormatError(
                f"{self.path}: offset {self.pos}: truncated (need {n} bytes, have {len(self.data) - self.pos})"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(float)


def read_binary(path) -> Dataset:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise DatasetFormatError(f"{path}: offset 0: bad magic")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})")
    try:
        header = json.loads(r.blob())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: offset {r.pos}: bad header ({exc.msg})") from None
    (sb,) = r.unpack("<I")
    stats = None
    if sb:
        stats = NormalizationStats(r.floats(2 * sb).reshape(sb, 2), r.floats(2 * sb).reshape(sb, 2))
    cases = []
    for _ in range(int(header["n_cases"])):
        cid = r.blob().decode()
        label, B, T = r.unpack("<BII")
        meta = json.loads(r.blob())
        mag = r.floats(B * T).reshape(B, T)
        ang = r.floats(B * T).reshape(B, T)
        nbytes = (B * T + 7) // 8
        known = np.unpackbits(np.frombuffer(r.take(nbytes), np.uint8), count=B * T,
                              bitorder="little").astype(bool).reshape(B, T)
        try:
            cases.append(ContingencyCase(cid, MeasurementMatrix(mag, ang, known), int(label), meta))
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: offset {r.pos}: {exc}") from None
    if r.pos != len(r.data):
        raise DatasetFormatError(f"{path}: offset {r.pos}: trailing bytes")
    return Dataset(cases, stats, float(header["frame_rate"]))


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    if path.suffix in (".jsonl", ".json"):
        write_jsonl(ds, path)
    else:
        write_binary(ds, path)


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.suffix in (".jsonl", ".json"):
        return read_jsonl(path)
    return read_binary(path)
