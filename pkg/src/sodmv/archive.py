"""Binary model archives.

Layout::

    magic      6 bytes   b"SODMV\\n"
    version    uint16    little-endian
    hlen       uint32    little-endian, length of the header
    header     hlen bytes of UTF-8 JSON (sorted keys)
    payload    float64 little-endian arrays, back to back

The header lists every array with its name, shape and byte offset into the
payload, plus the vocabulary, dimensions and training config needed to
rebuild the model. Loading checks the version, that the payload is complete,
and that every array has the shape the dimensions imply.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .grammar import GrammarError, Order, Vocab
from .neural import DimConfig, NeuralParams, _shapes
from .training import JointModel, NeuralModel, TableModel

MAGIC = b"SODMV\n"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<6sHI")


class ArchiveError(GrammarError):
    code = 10


class BadMagicError(ArchiveError):
    code = 11


class VersionError(ArchiveError):
    code = 12


class TruncatedError(ArchiveError):
    code = 13


class ShapeError(ArchiveError):
    code = 14


def _member_doc(role: str, model) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    doc = {"role": role, "order": model.order.value, "vocab": model.vocab.to_dict()}
    if isinstance(model, NeuralModel):
        doc["type"] = "neural"
        doc["dims"] = dataclasses.asdict(model.params.dims)
    elif isinstance(model, TableModel):
        doc["type"] = "table"
    else:
        raise ArchiveError(f"cannot archive {type(model).__name__}")
    return doc, sorted(model.weights.items())


def save_model(model, path: str | Path, config: dict | None = None) -> None:
    members = [("lexical", model.lexical), ("structural", model.structural)] if isinstance(model, JointModel) else [("single", model)]
    header = {"format_version": FORMAT_VERSION, "config": config or {}, "members": []}
    blobs, offset = [], 0
    for role, m in members:
        doc, arrays = _member_doc(role, m)
        doc["arrays"] = []
        for name, a in arrays:
            raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
            doc["arrays"].append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        header["members"].append(doc)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)))
        f.write(head)
        for b in blobs:
            f.write(b)


def _expected_shapes(doc: dict, vocab: Vocab, order: Order) -> dict[str, tuple]:
    if doc["type"] == "neural":
        return _shapes(DimConfig(**doc["dims"]), vocab)
    V = vocab.size
    X = V + 1 if order.second else 1
    return {"root": (V,), "child": (V, X, 2, 2, V), "decision": (V, X, 2, 2, 2)}


def _rebuild(doc: dict, payload: bytes):
    vocab = Vocab.from_dict(doc["vocab"])
    order = Order(doc["order"])
    expected = _expected_shapes(doc, vocab, order)
    weights = {}
    for entry in doc["arrays"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise ShapeError(f"shape inconsistency: {name} stored as {shape}, expected {expected.get(name)}")
        start, nbytes = entry["offset"], entry["nbytes"]
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)):
            raise ShapeError(f"shape inconsistency: {name} byte count does not match its shape")
        if start + nbytes > len(payload):
            raise TruncatedError("truncated file: payload ends inside array " + name)
        weights[name] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=start).astype(np.float64).reshape(shape)
    missing = set(expected) - set(weights)
    if missing:
        raise ShapeError(f"shape inconsistency: missing arrays {sorted(missing)}")
    if doc["type"] == "neural":
        return NeuralModel(NeuralParams(DimConfig(**doc["dims"]), weights), vocab, order)
    return TableModel(weights, vocab, order)


def load_model(path: str | Path):
    """Return ``(model, config)``; raises a specific :class:`ArchiveError` subclass on failure."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise TruncatedError("truncated file: shorter than the archive prefix")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: not a model archive")
    if version != FORMAT_VERSION:
        raise VersionError(f"version mismatch: archive has format {version}, this build reads {FORMAT_VERSION}")
    body = data[_PREFIX.size :]
    if len(body) < hlen:
        raise TruncatedError("truncated file: header incomplete")
    try:
        header = json.loads(body[:hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"corrupt header: {exc}") from None
    payload = body[hlen:]
    total = sum(e["nbytes"] for m in header["members"] for e in m["arrays"])
    if len(payload) < total:
        raise TruncatedError(f"truncated file: payload has {len(payload)} of {total} bytes")
    if len(payload) > total:
        raise ArchiveError("trailing bytes after payload")
    members = {m["role"]: _rebuild(m, payload) for m in header["members"]}
    if set(members) == {"lexical", "structural"}:
        model = JointModel(members["lexical"], members["structural"])
    elif set(members) == {"single"}:
        model = members["single"]
    else:
        raise ArchiveError(f"unexpected archive members {sorted(members)}")
    return model, header.get("config", {})
