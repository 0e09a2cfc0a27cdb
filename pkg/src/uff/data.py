"""Point cloud files, part labels, dataset manifests and PLY export.

Binary cloud format (``.uffp``), all little-endian::

    offset  size      content
    0       8         magic b"UFFPTS\\x00\\x01"
    8       8         uint64 point count N
    16      12 * N    N records of float32 x, y, z

ASCII clouds hold one point per line (first three numbers on the line,
separated by whitespace or commas; ``#`` starts a comment). OFF files are
read for their vertex list only.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CLOUD_MAGIC = b"UFFPTS\x00\x01"
_HEADER = struct.Struct("<8sQ")

MANIFEST_FORMAT = "uff-manifest/1"


class ParseError(ValueError):
    """Malformed input file; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, path=None, offset: int | None = None):
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{path or '<data>'}{where}: {message}")
        self.path = path
        self.offset = offset


# --------------------------------------------------------------------------
# clouds


def write_cloud(path, points) -> None:
    pts = np.asarray(points, dtype="<f4")
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CLOUD_MAGIC, len(pts)))
        fh.write(np.ascontiguousarray(pts).tobytes())


def parse_binary_cloud(data: bytes, path=None) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise ParseError("truncated header", path, len(data))
    magic, count = _HEADER.unpack_from(data)
    if magic != CLOUD_MAGIC:
        raise ParseError("bad magic", path, 0)
    need = _HEADER.size + 12 * count
    if len(data) != need:
        raise ParseError(f"expected {need} bytes for {count} points, found {len(data)}", path, min(len(data), need))
    pts = np.frombuffer(data, dtype="<f4", count=3 * count, offset=_HEADER.size).reshape(count, 3)
    bad = np.flatnonzero(~np.isfinite(pts).all(axis=1))
    if len(bad):
        raise ParseError("non-finite coordinate", path, _HEADER.size + 12 * int(bad[0]))
    return pts.astype(np.float64)


def _number_lines(data: bytes, path):
    """Yield (byte offset, tokens) for non-blank, non-comment lines."""
    offset = 0
    for raw in data.splitlines(keepends=True):
        line = raw.split(b"#", 1)[0].strip()
        if line:
            try:
                tokens = re.split(r"[\s,]+", line.decode("ascii"))
            except UnicodeDecodeError:
                raise ParseError("non-ASCII content", path, offset) from None
            yield offset, tokens
        offset += len(raw)


def _floats(tokens, n, path, offset) -> list[float]:
    if len(tokens) < n:
        raise ParseError(f"expected {n} numbers, found {len(tokens)}", path, offset)
    try:
        values = [float(t) for t in tokens[:n]]
    except ValueError:
        raise ParseError("invalid number", path, offset) from None
    if not all(np.isfinite(values)):
        raise ParseError("non-finite coordinate", path, offset)
    return values


def parse_ascii_cloud(data: bytes, path=None) -> np.ndarray:
    pts = [_floats(tokens, 3, path, off) for off, tokens in _number_lines(data, path)]
    if not pts:
        raise ParseError("no points", path, 0)
    return np.array(pts, dtype=np.float64)


def parse_off(data: bytes, path=None) -> np.ndarray:
    lines = _number_lines(data, path)
    try:
        offset, tokens = next(lines)
    except StopIteration:
        raise ParseError("empty OFF file", path, 0) from None
    if not tokens[0].startswith("OFF"):
        raise ParseError("missing OFF header", path, offset)
    # some writers put the counts on the header line itself ("OFF8 6 0")
    rest = [tokens[0][3:]] if tokens[0] != "OFF" else []
    rest += tokens[1:]
    if not [t for t in rest if t]:
        try:
            offset, rest = next(lines)
        except StopIteration:
            raise ParseError("missing vertex count", path, offset) from None
    rest = [t for t in rest if t]
    try:
        n_vertices = int(rest[0])
    except (ValueError, IndexError):
        raise ParseError("invalid vertex count", path, offset) from None
    pts = []
    for _ in range(n_vertices):
        try:
            offset, tokens = next(lines)
        except StopIteration:
            raise ParseError(f"expected {n_vertices} vertices, found {len(pts)}", path, len(data)) from None
        pts.append(_floats(tokens, 3, path, offset))
    if not pts:
        raise ParseError("no vertices", path, offset)
    return np.array(pts, dtype=np.float64)


def load_cloud(path) -> np.ndarray:
    """Read a cloud in any supported format; returns an (N, 3) float64 array."""
    path = Path(path)
    data = path.read_bytes()
    if data[:8] == CLOUD_MAGIC:
        return parse_binary_cloud(data, path)
    if data.lstrip()[:3] == b"OFF":
        return parse_off(data, path)
    return parse_ascii_cloud(data, path)


def normalize_cloud(points, mode: str = "sphere") -> np.ndarray:
    """Center and scale a cloud into the unit sphere or the unit cube."""
    pts = np.asarray(points, dtype=np.float64)
    if mode == "none":
        return pts.copy()
    if mode == "sphere":
        centered = pts - pts.mean(axis=0)
        radius = np.sqrt((centered * centered).sum(axis=1)).max()
    elif mode == "cube":
        centered = pts - 0.5 * (pts.min(axis=0) + pts.max(axis=0))
        radius = np.abs(centered).max()
    else:
        raise ValueError(f"unknown normalization {mode!r}")
    return centered / radius if radius > 0 else centered


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in np.asarray(labels).ravel()))


def load_labels(path) -> np.ndarray:
    data = Path(path).read_bytes()
    values = []
    for offset, tokens in _number_lines(data, path):
        try:
            values.append(int(tokens[0]))
        except ValueError:
            raise ParseError("invalid part label", path, offset) from None
    return np.array(values, dtype=np.int64)


# --------------------------------------------------------------------------
# manifests


@dataclass
class SampleEntry:
    cloud: str
    label: int
    parts: str | None = None


@dataclass
class Sample:
    points: np.ndarray
    label: int
    parts: np.ndarray | None
    name: str


@dataclass
class DatasetManifest:
    """A dataset description stored as JSON next to its files.

    Paths inside the manifest are relative to the manifest's directory.
    """

    root: Path
    splits: dict[str, list[SampleEntry]]
    point_count: int | None = None
    classes: list[str] = field(default_factory=list)
    part_vocabularies: dict[int, list[int]] = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path, exc.pos) from None
        if doc.get("format") != MANIFEST_FORMAT:
            raise ParseError(f"unsupported manifest format {doc.get('format')!r}", path)
        splits = {
            name: [SampleEntry(e["cloud"], int(e["label"]), e.get("parts")) for e in entries]
            for name, entries in doc.get("splits", {}).items()
        }
        manifest = cls(
            root=path.parent,
            splits=splits,
            point_count=doc.get("point_count"),
            classes=list(doc.get("classes", [])),
            part_vocabularies={int(k): [int(p) for p in v] for k, v in doc.get("part_vocabularies", {}).items()},
        )
        manifest.check_files()
        return manifest

    def check_files(self) -> None:
        for name, entries in self.splits.items():
            for entry in entries:
                for rel in (entry.cloud, entry.parts):
                    if rel is not None and not (self.root / rel).is_file():
                        raise FileNotFoundError(f"split {name!r}: missing file {self.root / rel}")

    def save(self, path) -> None:
        doc = {
            "format": MANIFEST_FORMAT,
            "point_count": self.point_count,
            "classes": self.classes,
            "part_vocabularies": {str(k): v for k, v in sorted(self.part_vocabularies.items())},
            "splits": {
                name: [
                    {k: v for k, v in (("cloud", e.cloud), ("label", e.label), ("parts", e.parts)) if v is not None}
                    for e in entries
                ]
                for name, entries in self.splits.items()
            },
        }
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    @property
    def num_classes(self) -> int:
        if self.classes:
            return len(self.classes)
        labels = [e.label for entries in self.splits.values() for e in entries]
        return max(labels) + 1 if labels else 0

    def entries(self, split: str) -> list[SampleEntry]:
        if split not in self.splits:
            raise KeyError(f"manifest has no split {split!r} (available: {sorted(self.splits)})")
        return self.splits[split]

    def load_split(self, split: str, normalize: str = "sphere", indices: Sequence[int] | None = None) -> list[Sample]:
        entries = self.entries(split)
        if indices is not None:
            entries = [entries[i] for i in indices]
        samples = []
        for entry in entries:
            pts = load_cloud(self.root / entry.cloud)
            if self.point_count is not None and len(pts) != self.point_count:
                raise ParseError(f"expected {self.point_count} points, found {len(pts)}", self.root / entry.cloud)
            parts = None
            if entry.parts is not None:
                parts = load_labels(self.root / entry.parts)
                if len(parts) != len(pts):
                    raise ParseError(f"{len(parts)} part labels for {len(pts)} points", self.root / entry.parts)
            samples.append(Sample(normalize_cloud(pts, normalize), entry.label, parts, entry.cloud))
        return samples


def stratified_subset(labels: Sequence[int], fraction: float, seed: int) -> np.ndarray:
    """Seeded per-class sample of ``fraction`` of the indices, at least one per class.

    Returns sorted indices.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    if fraction == 1.0:
        return np.arange(len(labels))
    rng = np.random.default_rng(seed)
    chosen = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        take = max(1, int(round(fraction * len(members))))
        chosen.append(rng.permutation(members)[:take])
    return np.sort(np.concatenate(chosen))


# --------------------------------------------------------------------------
# PLY export

_PALETTE = np.array(
    [
        [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
        [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230],
        [210, 245, 60], [250, 190, 212], [0, 128, 128], [220, 190, 255],
    ],
    dtype=np.uint8,
)


def label_colors(labels) -> np.ndarray:
    return _PALETTE[np.asarray(labels, dtype=np.int64) % len(_PALETTE)]


def write_ply(path, points, labels=None) -> None:
    """ASCII PLY with per-vertex colors and labels taken from ``labels``."""
    pts = np.asarray(points, dtype=np.float64)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z"]
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        colors = label_colors(labels)
        lines += ["property uchar red", "property uchar green", "property uchar blue", "property int label"]
    lines.append("end_header")
    for i, p in enumerate(pts):
        row = f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}"
        if labels is not None:
            c = colors[i]
            row += f" {c[0]} {c[1]} {c[2]} {labels[i]}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")
