"""JSON checkpoints for ``JlvaeParams``.

Floats are written as C99 hex-float strings (``float.hex``) so a save/load
round trip is bit-exact. The encoding is recorded in the document header.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .model import NETWORKS, JlvaeParams, ModelConfig
from .numerics import Mlp, MlpLayer

FORMAT_VERSION = 1
FLOAT_ENCODING = "hex"


def _enc(values: np.ndarray) -> list[str]:
    return [float(v).hex() for v in np.asarray(values, dtype=np.float64).reshape(-1)]


def _dec(values: list[str]) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=np.float64)


def params_to_doc(
    params: JlvaeParams, config: ModelConfig, preprocess_fingerprint: Optional[Any] = None
) -> dict:
    mlps = {}
    for name, mlp in params.networks():
        mlps[name] = [
            {
                "rows": layer.fan_in,
                "cols": layer.fan_out,
                "weights": _enc(layer.weights),
                "bias": _enc(layer.bias),
                "activation": layer.activation.value,
            }
            for layer in mlp.layers
        ]
    return {
        "format_version": FORMAT_VERSION,
        "float_encoding": FLOAT_ENCODING,
        "model_config": config.to_dict(),
        "preprocess_fingerprint": preprocess_fingerprint,
        "mlps": mlps,
    }


def params_from_doc(doc: dict) -> tuple[JlvaeParams, ModelConfig, Any]:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    if doc.get("float_encoding", FLOAT_ENCODING) != FLOAT_ENCODING:
        raise ValueError(f"unsupported float encoding {doc.get('float_encoding')!r}")
    config = ModelConfig.from_dict(doc["model_config"])
    nets = []
    for name in NETWORKS:
        layers = []
        for entry in doc["mlps"][name]:
            w = _dec(entry["weights"]).reshape(entry["rows"], entry["cols"])
            layers.append(MlpLayer(w, _dec(entry["bias"]), entry["activation"]))
        nets.append(Mlp(layers))
    params = JlvaeParams(*nets)
    widths = config.widths()
    for name, mlp in params.networks():
        if mlp.widths != widths[name]:
            raise ValueError(f"checkpoint network {name} has widths {mlp.widths}, config says {widths[name]}")
    return params, config, doc.get("preprocess_fingerprint")


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def write_atomic(path: os.PathLike, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def save_checkpoint(
    path: os.PathLike,
    params: JlvaeParams,
    config: ModelConfig,
    preprocess_fingerprint: Optional[Any] = None,
) -> None:
    write_atomic(path, dumps(params_to_doc(params, config, preprocess_fingerprint)))


def load_checkpoint(path: os.PathLike) -> tuple[JlvaeParams, ModelConfig, Any]:
    with open(path) as fh:
        return params_from_doc(json.load(fh))
