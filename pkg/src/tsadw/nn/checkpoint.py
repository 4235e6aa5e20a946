"""Versioned binary network checkpoints (``TSANN1``) with a JSON manifest."""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .lstm import DenseLayerParams, LstmLayerParams, LstmNetwork, NetworkConfig

MAGIC = b"TSANN1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_network(net: LstmNetwork, path, extra: dict | None = None) -> None:
    """Write ``path`` (binary) and ``path.json`` (manifest)."""
    path = Path(path)
    params = net.parameters()
    header = {
        "config": net.config.to_dict(),
        "activations": [d.activation for d in net.dense],
        "shapes": [list(p.shape) for p in params],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(hb)), hb]
    parts += [p.astype("<f8").tobytes() for p in params]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)
    manifest = dict(header, **(extra or {}))
    manifest["format"] = "TSANN1"
    manifest["version"] = VERSION
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_network(path) -> LstmNetwork:
    path = Path(path)
    data = path.read_bytes()
    if data[:6] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<HI", data[6:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} unsupported")
    header = json.loads(data[12:12 + hlen])
    pos = 12 + hlen
    arrays = []
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        chunk = data[pos:pos + 8 * count]
        if len(chunk) != 8 * count:
            raise CheckpointError(f"{path}: truncated at offset {pos}")
        arrays.append(np.frombuffer(chunk, "<f8").astype(float).reshape(shape))
        pos += 8 * count
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes at offset {pos}")
    c = header["config"]
    config = NetworkConfig(c["input_dim"], tuple(c["lstm_sizes"]), tuple(c["dense_sizes"]),
                           c.get("hidden_activation", "rectifier"))
    nl = len(config.lstm_sizes)
    lstm = [LstmLayerParams(*arrays[3 * k:3 * k + 3]) for k in range(nl)]
    dense = [
        DenseLayerParams(arrays[3 * nl + 2 * k], arrays[3 * nl + 2 * k + 1], act)
        for k, act in enumerate(header["activations"])
    ]
    return LstmNetwork(config, lstm, dense)
