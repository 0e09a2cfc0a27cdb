"""Saab transform: one-pass statistics, fitting and application.

A Saab transform has a fixed DC kernel ``(1/sqrt(D), ..., 1/sqrt(D))`` and
AC kernels obtained as the principal directions of the DC-removed
residuals ``x - (dc . x) dc``. A per-channel bias makes every response on
the fitting set non-negative.

Statistics are accumulated in a :class:`SaabStats` value that can be
updated batch by batch and merged, so a layer can be fitted over a whole
dataset without holding all samples at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import helmert

EIGEN_TOL = 1e-10


class SaabError(ValueError):
    """Base class for Saab fitting and application errors."""


class ShapeError(SaabError):
    pass


class InsufficientDataError(SaabError):
    pass


class NumericError(SaabError):
    pass


@dataclass
class SaabStats:
    """Sufficient statistics for fitting a Saab transform.

    ``scatter`` accumulates ``r r^T`` for the residual ``r`` of each sample
    after removing its projection on the DC kernel; ``dc_energy``
    accumulates the squared DC response.
    """

    dim: int
    n: int = 0
    sum: np.ndarray = field(default=None)
    scatter: np.ndarray = field(default=None)
    dc_energy: float = 0.0
    max_norm: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise ShapeError("input dimension must be at least 1")
        if self.sum is None:
            self.sum = np.zeros(self.dim)
        if self.scatter is None:
            self.scatter = np.zeros((self.dim, self.dim))

    @classmethod
    def empty(cls, dim: int) -> "SaabStats":
        return cls(dim)

    def copy(self) -> "SaabStats":
        return replace(self, sum=self.sum.copy(), scatter=self.scatter.copy())


def dc_kernel(dim: int) -> np.ndarray:
    return np.full(dim, 1.0 / np.sqrt(dim))


def _as_batch(samples, dim: int) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"expected samples of dimension {dim}, got shape {np.shape(samples)}")
    return x


def saab_accumulate(stats: SaabStats, samples) -> SaabStats:
    """Return ``stats`` updated with one sample (D,) or a batch (n, D)."""
    x = _as_batch(samples, stats.dim)
    if not np.all(np.isfinite(x)):
        raise NumericError("samples must be finite")
    out = stats.copy()
    if len(x) == 0:
        return out
    means = x.mean(axis=1, keepdims=True)
    resid = x - means
    out.n += len(x)
    out.sum += x.sum(axis=0)
    out.scatter += resid.T @ resid
    out.dc_energy += float(stats.dim * np.sum(means * means))
    out.max_norm = max(out.max_norm, float(np.sqrt((x * x).sum(axis=1)).max()))
    return out


def saab_merge(a: SaabStats, b: SaabStats) -> SaabStats:
    """Combine the statistics of two disjoint sample sets."""
    if a.dim != b.dim:
        raise ShapeError(f"cannot merge statistics of dimension {a.dim} and {b.dim}")
    return SaabStats(
        dim=a.dim,
        n=a.n + b.n,
        sum=a.sum + b.sum,
        scatter=a.scatter + b.scatter,
        dc_energy=a.dc_energy + b.dc_energy,
        max_norm=max(a.max_norm, b.max_norm),
    )


@dataclass(frozen=True)
class KeepPolicy:
    """How many channels a fitted transform keeps.

    With ``count`` set, exactly ``min(count, D)`` channels are kept.
    Otherwise the smallest number of channels whose cumulative energy
    fraction reaches ``energy`` is kept, capped at ``max_dim``.
    """

    count: int | None = None
    energy: float = 0.999
    max_dim: int | None = None

    def __post_init__(self):
        if self.count is not None and self.count < 1:
            raise ValueError("keep count must be positive")
        if not 0.0 < self.energy <= 1.0:
            raise ValueError("energy threshold must lie in (0, 1]")
        if self.max_dim is not None and self.max_dim < 1:
            raise ValueError("max_dim must be positive")

    def choose(self, energies: np.ndarray) -> int:
        dim = len(energies)
        if self.count is not None:
            kept = min(self.count, dim)
        else:
            total = energies.sum()
            if total <= 0:
                kept = 1
            else:
                frac = np.cumsum(energies) / total
                kept = int(np.searchsorted(frac, self.energy - 1e-12)) + 1
                kept = min(kept, dim)
        if self.max_dim is not None:
            kept = min(kept, self.max_dim)
        return kept


@dataclass(frozen=True, eq=False)
class SaabTransform:
    """A fitted Saab transform.

    Attributes
    ----------
    dc_kernel : (D,) array
    ac_kernels : (K-1, D) array, rows in order of decreasing energy
    energies : (K,) array
        Mean squared response per channel on the fitting set; entry 0 is
        the DC channel, the AC entries are non-increasing.
    bias : (K,) array
        Non-negative shift added to each channel.
    """

    dc_kernel: np.ndarray
    ac_kernels: np.ndarray
    energies: np.ndarray
    bias: np.ndarray

    @property
    def input_dim(self) -> int:
        return len(self.dc_kernel)

    @property
    def kept_dim(self) -> int:
        return 1 + len(self.ac_kernels)

    @property
    def kernels(self) -> np.ndarray:
        """All kernels as rows, DC first, shape (K, D)."""
        return np.vstack([self.dc_kernel[None, :], self.ac_kernels])

    def project(self, samples) -> np.ndarray:
        """Kernel responses without bias, shape (n, K)."""
        x = _as_batch(samples, self.input_dim)
        # einsum keeps each row's result independent of its batch position
        return np.einsum("nd,kd->nk", x, self.kernels)

    def apply(self, samples) -> np.ndarray:
        x = np.asarray(samples, dtype=np.float64)
        out = self.project(x) + self.bias
        return out[0] if x.ndim == 1 else out

    def with_bias(self, bias) -> "SaabTransform":
        b = np.asarray(bias, dtype=np.float64)
        if b.shape != (self.kept_dim,):
            raise ShapeError(f"bias must have {self.kept_dim} entries")
        if np.any(b < 0):
            raise SaabError("bias must be non-negative")
        return replace(self, bias=b.copy())

    def truncate(self, kept: int) -> "SaabTransform":
        """The transform restricted to its first ``kept`` channels."""
        kept = max(1, min(kept, self.kept_dim))
        return SaabTransform(
            self.dc_kernel, self.ac_kernels[: kept - 1], self.energies[:kept], self.bias[:kept]
        )


def _sign_fix(vec: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(vec) > EIGEN_TOL * np.abs(vec).max())
    if len(nz) and vec[nz[0]] < 0:
        return -vec
    return vec


def _order_kernels(vals: np.ndarray, kernels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort eigenpairs by descending eigenvalue with sign-fixed kernels.

    Eigenvalues within ``EIGEN_TOL`` (relative) of each other are ordered
    by lexicographic comparison of their kernels.
    """
    vals = np.clip(vals, 0.0, None)
    kernels = np.array([_sign_fix(v) for v in kernels]).reshape(kernels.shape)
    order = sorted(range(len(vals)), key=lambda i: -vals[i])
    scale = max(vals.max(initial=0.0), np.finfo(float).tiny)
    start = 0
    while start < len(order):
        stop = start + 1
        while stop < len(order) and vals[order[stop - 1]] - vals[order[stop]] <= EIGEN_TOL * scale:
            stop += 1
        if stop - start > 1:
            order[start:stop] = sorted(order[start:stop], key=lambda i: tuple(-kernels[i]))
        start = stop
    return vals[order], kernels[order]


def saab_fit(stats: SaabStats, keep: KeepPolicy | None = None) -> SaabTransform:
    """Fit kernels from accumulated statistics. The bias is left at zero.

    Use :func:`saab_bias` on the fitting samples to obtain the bias that
    makes the responses non-negative.
    """
    keep = keep or KeepPolicy()
    if stats.n < 2:
        raise InsufficientDataError(f"need at least 2 samples to fit, have {stats.n}")
    if not (np.all(np.isfinite(stats.scatter)) and np.isfinite(stats.dc_energy)):
        raise NumericError("scatter matrix is not finite")
    dim = stats.dim
    dc = dc_kernel(dim)
    if dim == 1:
        energies = np.array([stats.dc_energy / stats.n])
        return SaabTransform(dc, np.zeros((0, 1)), energies, np.zeros(1))

    # orthonormal basis of the complement of the DC direction
    basis = helmert(dim)
    scatter = 0.5 * (stats.scatter + stats.scatter.T)
    vals, vecs = np.linalg.eigh(basis @ scatter @ basis.T)
    vals, ac = _order_kernels(vals, vecs.T @ basis)

    energies = np.concatenate([[stats.dc_energy], vals]) / stats.n
    kept = keep.choose(energies)
    return SaabTransform(dc, ac[: kept - 1], energies[:kept], np.zeros(kept))


def saab_bias(transform: SaabTransform, batches) -> np.ndarray:
    """Per-channel max |response| over an iterable of sample batches."""
    bias = np.zeros(transform.kept_dim)
    for batch in batches:
        resp = transform.project(batch)
        if len(resp):
            np.maximum(bias, np.abs(resp).max(axis=0), out=bias)
    return bias


def saab_apply(transform: SaabTransform, sample) -> np.ndarray:
    """Biased responses of one sample (D,) or a batch (n, D)."""
    return transform.apply(sample)
