"""Model file serialization.

Layout, all integers little-endian::

    offset       size   content
    0            8      magic b"UFFMODEL"
    8            4      uint32 format version
    12           8      uint64 header length H
    20           H      UTF-8 JSON header (sorted keys, no whitespace)
    20+H         P      payload: raw little-endian array data
    20+H+P       32     SHA-256 of bytes [0, 20+H+P)

The header holds the pipeline config, free-form metadata and an array
table ``[{"name", "dtype", "shape", "offset", "nbytes"}]`` with offsets
into the payload. The trailing digest is the model fingerprint; any
corrupted byte makes loading fail.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .learners import (
    ForestParams,
    LeastSquaresClassifier,
    RandomForest,
    SegmentationHead,
    Standardizer,
    Tree,
)
from .pipeline import DecoderModel, EncoderModel, PipelineConfig, UFFModel
from .saab import KeepPolicy, SaabTransform

MAGIC = b"UFFMODEL"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


class ModelFileError(ValueError):
    pass


class FingerprintError(ModelFileError):
    pass


@dataclass
class ModelBundle:
    """Everything a run persists: the feature model plus classifier heads."""

    uff: UFFModel
    shape_classifiers: dict[str, object] = field(default_factory=dict)
    seg_heads: dict[int, SegmentationHead] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# config <-> plain data


def config_to_dict(config: PipelineConfig) -> dict:
    doc = asdict(config)
    doc["points_per_layer"] = list(config.points_per_layer)
    return doc


def config_from_dict(doc: dict) -> PipelineConfig:
    return PipelineConfig(
        num_layers=int(doc["num_layers"]),
        points_per_layer=tuple(int(v) for v in doc["points_per_layer"]),
        k_encoder=tuple(int(v) for v in doc["k_encoder"]),
        k_decoder=tuple(int(v) for v in doc["k_decoder"]),
        encoder_keep=tuple(KeepPolicy(**p) for p in doc["encoder_keep"]),
        decoder_keep=tuple(KeepPolicy(**p) for p in doc["decoder_keep"]),
        aggregations=tuple(doc["aggregations"]),
    )


class _Writer:
    def __init__(self):
        self.table = []
        self.chunks = []
        self.offset = 0

    def add(self, name: str, array) -> None:
        arr = np.asarray(array)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        self.table.append(
            {"name": name, "dtype": dtype.str, "shape": list(arr.shape), "offset": self.offset, "nbytes": len(data)}
        )
        self.chunks.append(data)
        self.offset += len(data)


class _Reader:
    def __init__(self, table, payload: bytes):
        self.entries = {e["name"]: e for e in table}
        self.payload = payload

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def get(self, name: str) -> np.ndarray:
        try:
            e = self.entries[name]
        except KeyError:
            raise ModelFileError(f"model file lacks array {name!r}") from None
        raw = self.payload[e["offset"] : e["offset"] + e["nbytes"]]
        return np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()


def _put_transform(w: _Writer, prefix: str, t: SaabTransform) -> None:
    w.add(f"{prefix}/dc", t.dc_kernel)
    w.add(f"{prefix}/ac", t.ac_kernels)
    w.add(f"{prefix}/energies", t.energies)
    w.add(f"{prefix}/bias", t.bias)


def _get_transform(r: _Reader, prefix: str) -> SaabTransform:
    return SaabTransform(
        r.get(f"{prefix}/dc"), r.get(f"{prefix}/ac"), r.get(f"{prefix}/energies"), r.get(f"{prefix}/bias")
    )


def _put_std(w: _Writer, prefix: str, s: Standardizer) -> None:
    w.add(f"{prefix}/std_mean", s.mean)
    w.add(f"{prefix}/std_scale", s.scale)


def _get_std(r: _Reader, prefix: str) -> Standardizer:
    return Standardizer(r.get(f"{prefix}/std_mean"), r.get(f"{prefix}/std_scale"))


def _put_forest(w: _Writer, prefix: str, f: RandomForest) -> dict:
    sizes = [len(t.feature) for t in f.trees]
    w.add(f"{prefix}/node_offsets", np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64))
    for key in ("feature", "threshold", "left", "right", "counts"):
        w.add(f"{prefix}/{key}", np.concatenate([getattr(t, key) for t in f.trees]))
    _put_std(w, prefix, f.standardizer)
    return {"kind": "rf", "num_classes": f.num_classes, "seed": f.seed, "params": asdict(f.params)}


def _get_forest(r: _Reader, prefix: str, info: dict) -> RandomForest:
    offsets = r.get(f"{prefix}/node_offsets")
    cols = {key: r.get(f"{prefix}/{key}") for key in ("feature", "threshold", "left", "right", "counts")}
    trees = [
        Tree(**{key: arr[a:b] for key, arr in cols.items()}) for a, b in zip(offsets[:-1], offsets[1:])
    ]
    return RandomForest(trees, int(info["num_classes"]), ForestParams(**info["params"]), int(info["seed"]), _get_std(r, prefix))


def _put_classifier(w: _Writer, prefix: str, clf) -> dict:
    if isinstance(clf, LeastSquaresClassifier):
        w.add(f"{prefix}/weights", clf.weights)
        _put_std(w, prefix, clf.standardizer)
        return {"kind": "lsq"}
    if isinstance(clf, RandomForest):
        return _put_forest(w, prefix, clf)
    raise ModelFileError(f"cannot serialize classifier of type {type(clf).__name__}")


def _get_classifier(r: _Reader, prefix: str, info: dict):
    if info["kind"] == "lsq":
        return LeastSquaresClassifier(r.get(f"{prefix}/weights"), _get_std(r, prefix))
    if info["kind"] == "rf":
        return _get_forest(r, prefix, info)
    raise ModelFileError(f"unknown classifier kind {info['kind']!r}")


# --------------------------------------------------------------------------


def dumps(bundle: ModelBundle) -> bytes:
    w = _Writer()
    uff = bundle.uff
    for i, t in enumerate(uff.encoder.transforms):
        _put_transform(w, f"encoder/{i}", t)
    for i, t in enumerate(uff.decoder.transforms):
        _put_transform(w, f"decoder/{i}", t)
    classifiers = {}
    for name in sorted(bundle.shape_classifiers):
        classifiers[name] = _put_classifier(w, f"cls/{name}", bundle.shape_classifiers[name])
    heads = {}
    for cls in sorted(bundle.seg_heads):
        head = bundle.seg_heads[cls]
        w.add(f"seg/{cls}/vocabulary", head.vocabulary.astype(np.int64))
        heads[str(cls)] = _put_forest(w, f"seg/{cls}", head.forest)
    header = {
        "config": config_to_dict(uff.config),
        "encoder_layers": len(uff.encoder.transforms),
        "decoder_steps": len(uff.decoder.transforms),
        "classifiers": classifiers,
        "seg_heads": heads,
        "meta": bundle.meta,
        "arrays": w.table,
    }
    head_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(head_bytes)) + head_bytes + b"".join(w.chunks)
    return body + hashlib.sha256(body).digest()


def loads(data: bytes) -> ModelBundle:
    if len(data) < _PREFIX.size + _DIGEST:
        raise ModelFileError("model file is truncated")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise FingerprintError("model fingerprint mismatch: file is corrupted")
    magic, version, head_len = _PREFIX.unpack_from(body)
    if magic != MAGIC:
        raise ModelFileError("not a UFF model file")
    if version != VERSION:
        raise ModelFileError(f"unsupported model format version {version} (expected {VERSION})")
    header = json.loads(body[_PREFIX.size : _PREFIX.size + head_len])
    r = _Reader(header["arrays"], body[_PREFIX.size + head_len :])

    config = config_from_dict(header["config"])
    encoder = EncoderModel(config, [_get_transform(r, f"encoder/{i}") for i in range(header["encoder_layers"])])
    decoder = DecoderModel([_get_transform(r, f"decoder/{i}") for i in range(header["decoder_steps"])])
    classifiers = {name: _get_classifier(r, f"cls/{name}", info) for name, info in header["classifiers"].items()}
    heads = {}
    for key, info in header["seg_heads"].items():
        cls = int(key)
        heads[cls] = SegmentationHead(cls, r.get(f"seg/{cls}/vocabulary"), _get_forest(r, f"seg/{cls}", info))
    return ModelBundle(UFFModel(encoder, decoder), classifiers, heads, header["meta"])


def fingerprint(data: bytes) -> str:
    return data[-_DIGEST:].hex()


def save_model(bundle: ModelBundle, path) -> str:
    """Write ``bundle`` and return its fingerprint."""
    data = dumps(bundle)
    Path(path).write_bytes(data)
    return fingerprint(data)


def load_model(path) -> ModelBundle:
    return loads(Path(path).read_bytes())


def model_fingerprint(path) -> str:
    return fingerprint(Path(path).read_bytes())
