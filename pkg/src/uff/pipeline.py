"""Fine-to-coarse encoder and coarse-to-fine decoder.

The encoder is a cascade of PointHop units. Each unit finds the k nearest
neighbors of every point, averages the neighbors' attributes inside each of
the 8 octants around the point, and reduces the flattened ``8 x D`` stack
with a Saab transform. Farthest point sampling pools the points between
consecutive units.

The decoder walks back from the coarsest layer. For every point of the
finer layer it gathers the nearest coarse points, builds the same octant
stack from the incoming decoder attributes, aggregates it along the octant
axis and applies a Saab transform. The output is concatenated with the
encoder attributes recorded at the finer layer (skip connection).

All parameters are fitted from data statistics in one feedforward pass per
layer; no labels are used.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import geometry
from .geometry import NUM_OCTANTS, GeometryError
from .saab import (
    InsufficientDataError,
    KeepPolicy,
    SaabStats,
    SaabTransform,
    saab_accumulate,
    saab_fit,
    saab_merge,
)

log = logging.getLogger(__name__)

AGGREGATIONS = ("mean", "l1", "l2", "max")


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Layer schedule and per-layer fitting options.

    ``points_per_layer`` may be left empty, in which case it is resolved
    from the input cloud size as ``(N, N/2, N/4, ...)``. ``k_encoder`` has
    one entry per encoder layer; ``k_decoder`` one entry per decoder step,
    listed from the innermost step (L -> L-1) outwards.
    """

    num_layers: int = 4
    points_per_layer: tuple[int, ...] = ()
    k_encoder: tuple[int, ...] = (32, 32, 32, 32)
    k_decoder: tuple[int, ...] = (8, 8, 8)
    encoder_keep: tuple[KeepPolicy, ...] = (
        KeepPolicy(max_dim=16),
        KeepPolicy(max_dim=32),
        KeepPolicy(max_dim=48),
        KeepPolicy(max_dim=64),
    )
    decoder_keep: tuple[KeepPolicy, ...] = (
        KeepPolicy(max_dim=48),
        KeepPolicy(max_dim=32),
        KeepPolicy(max_dim=24),
    )
    aggregations: tuple[str, ...] = AGGREGATIONS

    def __post_init__(self):
        L = self.num_layers
        if L < 1:
            raise PipelineError("num_layers must be at least 1")
        for name, values, want in (
            ("k_encoder", self.k_encoder, L),
            ("encoder_keep", self.encoder_keep, L),
            ("k_decoder", self.k_decoder, L - 1),
            ("decoder_keep", self.decoder_keep, L - 1),
        ):
            if len(values) != want:
                raise PipelineError(f"{name} needs {want} entries, got {len(values)}")
        if any(k < 1 for k in self.k_encoder + self.k_decoder):
            raise PipelineError("neighbor counts must be positive")
        sched = self.points_per_layer
        if sched:
            if len(sched) != L:
                raise PipelineError(f"points_per_layer needs {L} entries, got {len(sched)}")
            if any(b > a for a, b in zip(sched, sched[1:])) or sched[-1] < 1:
                raise PipelineError("points_per_layer must be positive and non-increasing")
            for layer, (n, k) in enumerate(zip(sched, self.k_encoder), start=1):
                if k > n:
                    raise PipelineError(f"layer {layer}: k={k} exceeds its {n} points")
            for step, k in enumerate(self.k_decoder):
                n_coarse = sched[L - 1 - step]
                if k > n_coarse:
                    raise PipelineError(
                        f"decoder step {L - step}->{L - step - 1}: k={k} exceeds {n_coarse} points"
                    )
        unknown = set(self.aggregations) - set(AGGREGATIONS)
        if unknown or not self.aggregations:
            raise PipelineError(f"unknown aggregation schemes: {sorted(unknown)}")

    @classmethod
    def uniform(
        cls,
        num_layers: int = 4,
        k: int = 32,
        k_decoder: int = 8,
        encoder_keep: KeepPolicy | Sequence[KeepPolicy] | None = None,
        decoder_keep: KeepPolicy | Sequence[KeepPolicy] | None = None,
        points_per_layer: Sequence[int] = (),
        aggregations: Sequence[str] = AGGREGATIONS,
    ) -> "PipelineConfig":
        """Config with the same neighbor counts and keep policy everywhere."""

        def spread(value, n):
            if value is None:
                return tuple(KeepPolicy() for _ in range(n))
            if isinstance(value, KeepPolicy):
                return (value,) * n
            return tuple(value)

        return cls(
            num_layers=num_layers,
            points_per_layer=tuple(points_per_layer),
            k_encoder=(k,) * num_layers,
            k_decoder=(k_decoder,) * (num_layers - 1),
            encoder_keep=spread(encoder_keep, num_layers),
            decoder_keep=spread(decoder_keep, num_layers - 1),
            aggregations=tuple(aggregations),
        )

    @property
    def num_aggregations(self) -> int:
        return len(self.aggregations)

    def resolve(self, n_points: int) -> "PipelineConfig":
        """Fill in the default halving schedule for clouds of ``n_points``."""
        if self.points_per_layer:
            return self
        sched = tuple(max(1, n_points >> layer) for layer in range(self.num_layers))
        return replace(self, points_per_layer=sched)


@dataclass
class LayerRecord:
    """Coordinates and attributes of the points kept at one layer.

    ``attributes`` is None only for the raw input, whose attribute is the
    offset of each neighbor from its center.
    """

    coordinates: np.ndarray
    attributes: np.ndarray | None = None

    def __post_init__(self):
        self.coordinates = geometry.as_points(self.coordinates)
        if self.attributes is not None:
            self.attributes = np.asarray(self.attributes, dtype=np.float64)
            if self.attributes.ndim != 2 or len(self.attributes) != len(self.coordinates):
                raise PipelineError("attributes must be an (N, D) matrix matching the coordinates")

    @property
    def num_points(self) -> int:
        return len(self.coordinates)

    @property
    def dim(self) -> int:
        return 3 if self.attributes is None else self.attributes.shape[1]


@dataclass
class EncoderModel:
    config: PipelineConfig
    transforms: list[SaabTransform] = field(default_factory=list)

    @property
    def dims(self) -> list[int]:
        return [t.kept_dim for t in self.transforms]


@dataclass
class DecoderModel:
    """Decoder transforms ordered from the innermost step (L -> L-1) outwards."""

    transforms: list[SaabTransform] = field(default_factory=list)

    @property
    def dims(self) -> list[int]:
        return [t.kept_dim for t in self.transforms]


@dataclass
class UFFModel:
    encoder: EncoderModel
    decoder: DecoderModel

    @property
    def config(self) -> PipelineConfig:
        return self.encoder.config


# --------------------------------------------------------------------------
# aggregation


def aggregate(values, schemes: Sequence[str] = AGGREGATIONS, axis: int = 0) -> np.ndarray:
    """Reduce ``values`` along ``axis`` with each aggregation scheme.

    The schemes are stacked on a new leading axis, so a vector gives an
    M-vector and an (N, D) matrix reduced over points gives (M, D).
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise PipelineError("cannot aggregate an empty vector")
    out = []
    for name in schemes:
        if name == "mean":
            out.append(v.mean(axis=axis))
        elif name == "l1":
            out.append(np.abs(v).sum(axis=axis))
        elif name == "l2":
            out.append(np.sqrt((v * v).sum(axis=axis)))
        elif name == "max":
            out.append(np.abs(v).max(axis=axis))
        else:
            raise PipelineError(f"unknown aggregation scheme {name!r}")
    return np.stack(out)


def shape_feature(records: Sequence[LayerRecord], schemes: Sequence[str] = AGGREGATIONS) -> np.ndarray:
    """Global descriptor: point-axis aggregates of every layer, concatenated.

    Each column is sorted before reduction so the result does not depend
    on point order.
    """
    parts = []
    for rec in records:
        if rec.attributes is None:
            raise PipelineError("shape_feature needs encoded layer records")
        parts.append(aggregate(np.sort(rec.attributes, axis=0), schemes).ravel())
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# PointHop unit


def unit_stacks(record: LayerRecord, k: int) -> np.ndarray:
    """Flattened octant stacks of every point's k-neighborhood, (N, 8*D)."""
    if not 1 <= k <= record.num_points:
        raise GeometryError(f"k={k} out of range for a layer of {record.num_points} points")
    coords = record.coordinates
    nbr = geometry.knn_indices(coords, coords, k)
    stacks = geometry.octant_stacks(coords, coords, nbr, record.attributes)
    return stacks.reshape(len(coords), -1)


def _map(fn: Callable, items: Iterable, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _fit_batches(batches: list[np.ndarray], keep: KeepPolicy) -> tuple[SaabTransform, list[np.ndarray]]:
    """Fit a biased transform on per-cloud sample batches; return its outputs too.

    Statistics are accumulated per batch and merged in batch order, so the
    result does not depend on how the batches were produced.
    """
    if not batches:
        raise InsufficientDataError("no samples to fit")
    dim = batches[0].shape[1]
    stats = SaabStats.empty(dim)
    for batch in batches:
        stats = saab_merge(stats, saab_accumulate(SaabStats.empty(dim), batch))
    transform = saab_fit(stats, keep)
    projections = [transform.project(b) for b in batches]
    bias = np.zeros(transform.kept_dim)
    for proj in projections:
        np.maximum(bias, np.abs(proj).max(axis=0), out=bias)
    transform = transform.with_bias(bias)
    return transform, [p + bias for p in projections]


def pointhop_unit_fit(
    records: Sequence[LayerRecord], k: int, keep: KeepPolicy | None = None, workers: int = 1
) -> SaabTransform:
    """Fit the Saab transform of one PointHop unit over a set of clouds."""
    if not records:
        raise InsufficientDataError("no clouds to fit")
    dims = {r.dim for r in records}
    if len(dims) != 1:
        raise PipelineError(f"records disagree on attribute dimension: {sorted(dims)}")
    batches = _map(lambda r: unit_stacks(r, k), records, workers)
    transform, _ = _fit_batches(batches, keep or KeepPolicy())
    return transform


def pointhop_unit_apply(transform: SaabTransform, record: LayerRecord, k: int) -> np.ndarray:
    """New attributes of every point of ``record``, shape (N, K)."""
    return transform.apply(unit_stacks(record, k))


def pool(record: LayerRecord, n: int) -> LayerRecord:
    """Keep ``n`` points of a layer chosen by farthest point sampling."""
    idx = geometry.farthest_point_sample(record.coordinates, n)
    attrs = None if record.attributes is None else record.attributes[idx]
    return LayerRecord(record.coordinates[idx], attrs)


def _layer_size(config: PipelineConfig, layer: int, available: int) -> int:
    return min(config.points_per_layer[layer], available)


def _check_cloud(config: PipelineConfig, cloud) -> np.ndarray:
    pts = geometry.as_points(cloud)
    if len(pts) < config.points_per_layer[-1]:
        raise GeometryError(
            f"cloud of {len(pts)} points is smaller than the coarsest layer "
            f"({config.points_per_layer[-1]} points)"
        )
    return pts


# --------------------------------------------------------------------------
# encoder


def encode(model: EncoderModel | UFFModel, cloud) -> list[LayerRecord]:
    """Run the encoder and return one record per layer."""
    enc = model.encoder if isinstance(model, UFFModel) else model
    config = enc.config
    current = LayerRecord(_check_cloud(config, cloud))
    records = []
    for layer, transform in enumerate(enc.transforms):
        if layer:
            current = pool(current, _layer_size(config, layer, current.num_points))
        attrs = pointhop_unit_apply(transform, current, config.k_encoder[layer])
        current = LayerRecord(current.coordinates, attrs)
        records.append(current)
    return records


def _fit_encoder_records(
    clouds: Sequence, config: PipelineConfig, workers: int = 1
) -> tuple[EncoderModel, list[list[LayerRecord]]]:
    if not len(clouds):
        raise InsufficientDataError("cannot fit an encoder on an empty dataset")
    config = config.resolve(len(clouds[0]))
    current = [LayerRecord(_check_cloud(config, c)) for c in clouds]
    model = EncoderModel(config)
    per_cloud: list[list[LayerRecord]] = [[] for _ in clouds]
    for layer in range(config.num_layers):
        if layer:
            current = _map(
                lambda r: pool(r, _layer_size(config, layer, r.num_points)), current, workers
            )
        k = config.k_encoder[layer]
        batches = _map(lambda r: unit_stacks(r, k), current, workers)
        transform, outputs = _fit_batches(batches, config.encoder_keep[layer])
        model.transforms.append(transform)
        current = [LayerRecord(r.coordinates, out) for r, out in zip(current, outputs)]
        for recs, rec in zip(per_cloud, current):
            recs.append(rec)
        log.info(
            "encoder layer %d: %d -> %d dims, %d points, energy kept %.4f",
            layer + 1,
            transform.input_dim,
            transform.kept_dim,
            current[0].num_points,
            transform.energies.sum() / max(_total_energy(batches), np.finfo(float).tiny),
        )
    return model, per_cloud


def _total_energy(batches: list[np.ndarray]) -> float:
    n = sum(len(b) for b in batches)
    return sum(float((b * b).sum()) for b in batches) / max(n, 1)


def fit_encoder(clouds: Sequence, config: PipelineConfig | None = None, workers: int = 1) -> EncoderModel:
    """Fit all encoder layers, one after another, on an unlabeled dataset."""
    model, _ = _fit_encoder_records(clouds, config or PipelineConfig(), workers)
    return model


# --------------------------------------------------------------------------
# decoder


def decoder_inputs(
    coarse: LayerRecord, incoming: np.ndarray, fine: LayerRecord, k: int, schemes: Sequence[str]
) -> np.ndarray:
    """Aggregated octant stacks of coarse attributes around each fine point.

    Returns an (N_fine, M*D_in) matrix.
    """
    incoming = np.asarray(incoming, dtype=np.float64)
    if incoming.ndim != 2 or len(incoming) != coarse.num_points:
        raise PipelineError("incoming attributes must have one row per coarse point")
    if not 1 <= k <= coarse.num_points:
        raise GeometryError(f"k={k} out of range for a layer of {coarse.num_points} points")
    nbr = geometry.knn_indices(coarse.coordinates, fine.coordinates, k)
    stacks = geometry.octant_stacks(fine.coordinates, coarse.coordinates, nbr, incoming)
    agg = aggregate(stacks, schemes, axis=1)  # (M, N_fine, D_in)
    return agg.transpose(1, 0, 2).reshape(fine.num_points, -1)


def decoder_step(
    records: Sequence[LayerRecord],
    level: int,
    incoming: np.ndarray,
    transform: SaabTransform,
    k: int,
    schemes: Sequence[str] = AGGREGATIONS,
) -> np.ndarray:
    """Attributes at layer ``level - 1`` from decoder attributes at ``level``.

    ``level`` counts encoder layers from 1. The Saab output is concatenated
    with the encoder attributes recorded at layer ``level - 1``.
    """
    if not 2 <= level <= len(records):
        raise PipelineError(f"decoder level {level} out of range")
    coarse, fine = records[level - 1], records[level - 2]
    out = transform.apply(decoder_inputs(coarse, incoming, fine, k, schemes))
    return np.hstack([out, fine.attributes])


def point_features(records: Sequence[LayerRecord], model: UFFModel) -> np.ndarray:
    """Per-point descriptors at full input resolution, in input order."""
    config = model.config
    L = len(records)
    incoming = records[-1].attributes
    if L == 1:
        return incoming.copy()
    for step, transform in enumerate(model.decoder.transforms):
        level = L - step
        incoming = decoder_step(
            records, level, incoming, transform, config.k_decoder[step], config.aggregations
        )
    return incoming


def fit_decoder(
    encoded: Sequence[Sequence[LayerRecord]], config: PipelineConfig, workers: int = 1
) -> DecoderModel:
    """Fit the decoder steps innermost first on an encoded dataset."""
    if not encoded:
        raise InsufficientDataError("cannot fit a decoder on an empty dataset")
    L = config.num_layers
    model = DecoderModel()
    incoming = [recs[-1].attributes for recs in encoded]
    for step in range(L - 1):
        level = L - step
        k = config.k_decoder[step]

        def inputs(i):
            recs = encoded[i]
            return decoder_inputs(recs[level - 1], incoming[i], recs[level - 2], k, config.aggregations)

        batches = _map(inputs, range(len(encoded)), workers)
        transform, outputs = _fit_batches(batches, config.decoder_keep[step])
        model.transforms.append(transform)
        incoming = [np.hstack([out, recs[level - 2].attributes]) for out, recs in zip(outputs, encoded)]
        log.info("decoder step %d->%d: %d -> %d dims", level, level - 1, transform.input_dim, transform.kept_dim)
    return model


def fit_uff(clouds: Sequence, config: PipelineConfig | None = None, workers: int = 1) -> UFFModel:
    """Fit encoder and decoder on an unlabeled dataset."""
    encoder, encoded = _fit_encoder_records(clouds, config or PipelineConfig(), workers)
    decoder = fit_decoder(encoded, encoder.config, workers)
    return UFFModel(encoder, decoder)


def extract(model: UFFModel, cloud) -> tuple[np.ndarray, np.ndarray]:
    """Shape feature and point feature map of one cloud."""
    records = encode(model, cloud)
    return shape_feature(records, model.config.aggregations), point_features(records, model)
