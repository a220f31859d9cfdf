"""Parameter initialization and the binary checkpoint format.

Checkpoint layout: magic line, 8-byte little-endian header length, header
JSON (config + tensor manifest with byte offsets), then the float32
little-endian payload. Saving is byte-deterministic for identical params.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Mapping

import numpy as np

from .config import EncoderConfig

MAGIC = b"LEANPREMISE-CKPT-1\n"
INIT_STD = 0.02


class CheckpointError(ValueError):
    pass


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) resampled until within +/- 2 std (BERT convention)."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


def init_params(config: EncoderConfig, with_mlm_head: bool = True) -> dict[str, np.ndarray]:
    dtype = np.dtype(config.dtype)
    rng = np.random.default_rng(config.seed)
    H, I, V, P = config.hidden, config.intermediate, config.vocab_size, config.max_positions

    def tn(*shape):
        return _truncated_normal(rng, shape, INIT_STD, dtype)

    def zeros(*shape):
        return np.zeros(shape, dtype=dtype)

    def ones(*shape):
        return np.ones(shape, dtype=dtype)

    params: dict[str, np.ndarray] = {
        "tok_emb": tn(V, H),
        "pos_emb": tn(P, H),
        "emb_ln_g": ones(H),
        "emb_ln_b": zeros(H),
    }
    for i in range(config.n_layers):
        pre = f"layer{i}."
        params[pre + "wq"] = tn(H, H)
        params[pre + "bq"] = zeros(H)
        params[pre + "wk"] = tn(H, H)
        params[pre + "bk"] = zeros(H)
        params[pre + "wv"] = tn(H, H)
        params[pre + "bv"] = zeros(H)
        params[pre + "wo"] = tn(H, H)
        params[pre + "bo"] = zeros(H)
        params[pre + "ln1_g"] = ones(H)
        params[pre + "ln1_b"] = zeros(H)
        params[pre + "w1"] = tn(H, I)
        params[pre + "b1"] = zeros(I)
        params[pre + "w2"] = tn(I, H)
        params[pre + "b2"] = zeros(H)
        params[pre + "ln2_g"] = ones(H)
        params[pre + "ln2_b"] = zeros(H)
    if with_mlm_head:
        params["mlm.dense_w"] = tn(H, H)
        params["mlm.dense_b"] = zeros(H)
        params["mlm.ln_g"] = ones(H)
        params["mlm.ln_b"] = zeros(H)
        params["mlm.out_w"] = tn(H, V)
        params["mlm.out_b"] = zeros(V)
    return params


def init_rerank_head(config: EncoderConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    dtype = np.dtype(config.dtype)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return {
        "head.w": _truncated_normal(rng, (config.hidden,), INIT_STD, dtype),
        "head.b": np.zeros((1,), dtype=dtype),
    }


def zeros_like_params(params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def save_checkpoint(
    path,
    params: Mapping[str, np.ndarray],
    config: EncoderConfig,
    kind: str = "encoder",
    run_config: dict | None = None,
) -> None:
    names = sorted(params)
    manifest = []
    offset = 0
    for name in names:
        arr = params[name]
        nbytes = int(np.prod(arr.shape)) * 4
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += nbytes
    header = {
        "format_version": 1,
        "kind": kind,
        "config": config.to_dict(),
        "run_config": run_config,
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], EncoderConfig, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    config = EncoderConfig.from_dict(header["config"])
    dtype = np.dtype(config.dtype)
    params: dict[str, np.ndarray] = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape))
        start = t["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        params[t["name"]] = arr.reshape(shape).astype(dtype)
    return params, config, header


def checkpoint_fingerprint(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
