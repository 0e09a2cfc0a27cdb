"""Synthetic point cloud datasets.

Classification shapes: sphere surface, cube surface, elongated cylinder,
cone and torus. Segmentation shapes are two-part sphere + rod objects: a
"lollipop" (one sphere on a rod, parts 0/1) and a "dumbbell" (spheres on
both ends of a rod, parts 2/3).

Every sample gets a random rotation, a mild per-axis scale jitter and
Gaussian surface noise, then is normalized into the unit sphere.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .data import DatasetManifest, SampleEntry, normalize_cloud, write_cloud, write_labels

CLS_SHAPES = ("sphere", "cube", "cylinder", "cone", "torus")
SEG_SHAPES = ("lollipop", "dumbbell")
SEG_VOCAB = {0: [0, 1], 1: [2, 3]}


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sphere(rng, n, radius=1.0):
    return radius * _unit_vectors(rng, n)


def cube_surface(rng, n):
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    face = rng.integers(0, 3, size=n)
    pts[np.arange(n), face] = rng.choice([-1.0, 1.0], size=n)
    return pts


def cylinder(rng, n, radius=0.3, length=2.0):
    theta = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-length / 2, length / 2, n)
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta), z])


def cone(rng, n):
    theta = rng.uniform(0, 2 * np.pi, n)
    h = np.sqrt(rng.uniform(0, 1, n))  # uniform over the lateral surface
    return np.column_stack([h * np.cos(theta), h * np.sin(theta), 1.0 - 2.0 * h])


def torus(rng, n, major=1.0, minor=0.3):
    u = rng.uniform(0, 2 * np.pi, n)
    v = rng.uniform(0, 2 * np.pi, n)
    r = major + minor * np.cos(v)
    return np.column_stack([r * np.cos(u), r * np.sin(u), minor * np.sin(v)])


def classification_shape(kind: str, rng, n):
    if kind == "sphere":
        return sphere(rng, n)
    if kind == "cube":
        return cube_surface(rng, n)
    if kind == "cylinder":
        return cylinder(rng, n)
    if kind == "cone":
        return cone(rng, n)
    if kind == "torus":
        return torus(rng, n)
    raise ValueError(f"unknown shape {kind!r}")


def segmentation_shape(kind: str, rng, n):
    """Points and part ids of a sphere + rod object."""
    radius = rng.uniform(0.45, 0.55)
    rod_r = rng.uniform(0.07, 0.1)
    if kind == "lollipop":
        n_sphere = n // 2
        length = rng.uniform(1.4, 1.8)
        balls = sphere(rng, n_sphere, radius) + [0.0, 0.0, length / 2 + radius]
        rod = cylinder(rng, n - n_sphere, rod_r, length)
        labels = SEG_VOCAB[0]
    elif kind == "dumbbell":
        n_sphere = n // 2
        length = rng.uniform(1.0, 1.4)
        balls = sphere(rng, n_sphere, radius)
        balls[: n_sphere // 2, 2] += length / 2 + radius
        balls[n_sphere // 2 :, 2] -= length / 2 + radius
        rod = cylinder(rng, n - n_sphere, rod_r, length)
        labels = SEG_VOCAB[1]
    else:
        raise ValueError(f"unknown shape {kind!r}")
    pts = np.vstack([balls, rod])
    parts = np.concatenate([np.full(n_sphere, labels[0]), np.full(n - n_sphere, labels[1])])
    return pts, parts


def _perturb(rng, pts, noise):
    pts = pts * rng.uniform(0.85, 1.15, size=3)
    pts = Rotation.random(random_state=rng).apply(pts)
    pts = pts + rng.normal(scale=noise, size=pts.shape)
    return normalize_cloud(pts, "sphere")


def make_classification(n_classes=3, n_train=100, n_test=50, n_points=512, seed=0, noise=0.01):
    """Return ``{split: (clouds, labels)}`` for the classification shapes."""
    if not 1 <= n_classes <= len(CLS_SHAPES):
        raise ValueError(f"n_classes must be in [1, {len(CLS_SHAPES)}]")
    rng = np.random.default_rng(seed)
    out = {}
    for split, count in (("train", n_train), ("test", n_test)):
        clouds, labels = [], []
        for i in range(count):
            for cls in range(n_classes):
                clouds.append(_perturb(rng, classification_shape(CLS_SHAPES[cls], rng, n_points), noise))
                labels.append(cls)
        out[split] = (clouds, np.array(labels))
    return out


def make_segmentation(n_classes=2, n_train=60, n_test=30, n_points=512, seed=0, noise=0.01):
    """Return ``{split: (clouds, labels, parts)}`` for the sphere + rod shapes."""
    if not 1 <= n_classes <= len(SEG_SHAPES):
        raise ValueError(f"n_classes must be in [1, {len(SEG_SHAPES)}]")
    rng = np.random.default_rng(seed)
    out = {}
    for split, count in (("train", n_train), ("test", n_test)):
        clouds, labels, parts = [], [], []
        for i in range(count):
            for cls in range(n_classes):
                pts, seg = segmentation_shape(SEG_SHAPES[cls], rng, n_points)
                clouds.append(_perturb(rng, pts, noise))
                labels.append(cls)
                parts.append(seg)
        out[split] = (clouds, np.array(labels), parts)
    return out


def write_dataset(out_dir, task="cls", n_classes=3, n_train=100, n_test=50, n_points=512, seed=0) -> Path:
    """Generate a dataset on disk and return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if task == "cls":
        data = make_classification(n_classes, n_train, n_test, n_points, seed)
        names = list(CLS_SHAPES[:n_classes])
        vocab = {}
    elif task == "seg":
        data = make_segmentation(n_classes, n_train, n_test, n_points, seed)
        names = list(SEG_SHAPES[:n_classes])
        vocab = {c: SEG_VOCAB[c] for c in range(n_classes)}
    else:
        raise ValueError(f"unknown task {task!r}")
    splits = {}
    for split, payload in data.items():
        (out_dir / split).mkdir(exist_ok=True)
        entries = []
        for i, cloud in enumerate(payload[0]):
            stem = f"{split}/{i:05d}"
            write_cloud(out_dir / f"{stem}.uffp", cloud)
            parts = None
            if task == "seg":
                parts = f"{stem}.seg"
                write_labels(out_dir / parts, payload[2][i])
            entries.append(SampleEntry(f"{stem}.uffp", int(payload[1][i]), parts))
        splits[split] = entries
    manifest = DatasetManifest(out_dir, splits, n_points, names, vocab)
    path = out_dir / "manifest.json"
    manifest.save(path)
    return path
