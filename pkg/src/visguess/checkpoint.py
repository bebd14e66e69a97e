"""Checkpoint files: a JSON header line followed by raw little-endian
float64 payloads, one per tensor, in header order. Bit-exact and
diff-able at the header level."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .embed import EncoderParams
from .numcore import ParamSet
from .policy import DqnParams, DrrnParams

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _collect(named_psets: dict[str, ParamSet]) -> list[tuple[str, np.ndarray]]:
    out = []
    for prefix, pset in named_psets.items():
        for name in pset.names():
            out.append((f"{prefix}/{name}" if prefix else name, pset[name]))
    return out


def save_checkpoint(path, kind: str, named_psets: dict[str, ParamSet],
                    meta: dict) -> None:
    tensors = _collect(named_psets)
    header = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
        "meta": meta,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode() + b"\n")
        for _, a in tensors:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path, expect_kind: str | None = None):
    """Returns (kind, tensors dict, meta)."""
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path}: bad checkpoint header: {e}") from e
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version")
        if expect_kind and header["kind"] != expect_kind:
            raise CheckpointError(
                f"{path}: expected {expect_kind!r} checkpoint, found "
                f"{header['kind']!r}")
        tensors = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(
                    f"{path}: truncated payload for tensor {spec['name']!r}")
            tensors[spec["name"]] = np.frombuffer(
                raw, dtype="<f8").reshape(shape).astype(np.float64)
    return header["kind"], tensors, header.get("meta", {})


def _fill(pset: ParamSet, tensors: dict, prefix: str) -> None:
    for name in pset.names():
        key = f"{prefix}/{name}" if prefix else name
        if key not in tensors:
            raise CheckpointError(f"missing tensor {key!r} in checkpoint")
        if tensors[key].shape != pset[name].shape:
            raise CheckpointError(
                f"tensor {key!r} shape {tensors[key].shape} != expected "
                f"{pset[name].shape}")
        pset[name] = tensors[key]


def save_encoder(path, enc: EncoderParams, meta: dict | None = None) -> None:
    m = {"k": enc.k, "d": enc.d, "a": enc.a, **(meta or {})}
    save_checkpoint(path, "encoder", {"": enc.pset}, m)


def load_encoder(path) -> tuple[EncoderParams, dict]:
    _, tensors, meta = load_checkpoint(path, "encoder")
    enc = EncoderParams(k=int(meta["k"]), d=int(meta["d"]),
                        a=int(meta["a"]))
    _fill(enc.pset, tensors, "")
    return enc, meta


def save_dqn(path, dqn: DqnParams, meta: dict | None = None) -> None:
    m = {"input_dim": dqn.input_dim, "hidden": list(dqn.hidden),
         **(meta or {})}
    save_checkpoint(path, "dqn", {"online": dqn.online,
                                  "target": dqn.target}, m)


def load_dqn(path) -> tuple[DqnParams, dict]:
    _, tensors, meta = load_checkpoint(path, "dqn")
    dqn = DqnParams(int(meta["input_dim"]), tuple(meta["hidden"]))
    _fill(dqn.online, tensors, "online")
    _fill(dqn.target, tensors, "target")
    return dqn, meta


def save_drrn(path, drrn: DrrnParams, meta: dict | None = None) -> None:
    m = {"k": drrn.k, "hidden": list(drrn.hidden), **(meta or {})}
    save_checkpoint(path, "drrn", {"": drrn.online}, m)


def load_drrn(path) -> tuple[DrrnParams, dict]:
    _, tensors, meta = load_checkpoint(path, "drrn")
    drrn = DrrnParams(int(meta["k"]), tuple(meta["hidden"]))
    _fill(drrn.online, tensors, "")
    return drrn, meta
