"""Exact electrostatic fields of point-charge plates in D+1 dimensions.

Direct summation over weighted sample charges; this is the ground-truth
oracle used both for training targets and for transport on small problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import FieldError

# Norms below this are treated as a vanishing field when normalizing.
TINY_FIELD_NORM = 1e-30

# Above this ambient dimension the inverse-power law is accumulated in
# log-magnitude/direction form: r**d leaves float range long before the
# normalized field direction stops being meaningful.
LOG_ACCUMULATION_DIM = 32

_PAIR_BLOCK = 4_000_000  # max pairwise entries materialized at once


def sphere_surface_area(n: int) -> float:
    """Surface area of the unit n-sphere embedded in R^(n+1).

    S_n = 2 pi^((n+1)/2) / Gamma((n+1)/2); S_1 = 2 pi, S_2 = 4 pi.
    """
    if n < 0:
        raise ValueError("sphere dimension must be nonnegative")
    half = (n + 1) / 2.0
    return float(2.0 * np.exp(half * np.log(np.pi) - gammaln(half)))


def point_charge_field(x, source, q: float, field_epsilon: float = 0.0) -> np.ndarray:
    """Field of a single point charge q at `source`, evaluated at `x`.

    E(x) = q / S_{d-1} * (x - source) / (|x - source|^2 + eps^2)^(d/2),
    which is the exact inverse-power law when field_epsilon is zero.
    """
    x = np.asarray(x, dtype=float)
    source = np.asarray(source, dtype=float)
    d = x.shape[-1]
    diff = x - source
    r2 = np.sum(diff * diff, axis=-1, keepdims=True) + field_epsilon ** 2
    return q / sphere_surface_area(d - 1) * diff / r2 ** (0.5 * d)


def scaled_superposition(points, sources, charges, field_epsilon: float = 0.0,
                         sources_sq=None):
    """Direct-sum field of many charges, split as (vec, log_scale).

    The true field is vec * exp(log_scale)[:, None]. For ambient dimension
    <= LOG_ACCUMULATION_DIM the plain sum is returned with log_scale = 0;
    above it, per-row log shifts keep the direction representable even when
    the magnitude under- or overflows. `sources_sq` may carry precomputed
    row norms of `sources` for hot loops.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    charges = np.asarray(charges, dtype=float)
    m, d = points.shape
    if sources.shape[1] != d:
        raise FieldError("points and sources must share a dimension")
    n = sources.shape[0]
    inv_area = 1.0 / sphere_surface_area(d - 1)
    eps2 = field_epsilon * field_epsilon
    vec = np.empty((m, d))
    log_scale = np.zeros(m)
    block = max(1, _PAIR_BLOCK // max(n, 1))
    s_sq = sources_sq if sources_sq is not None else np.einsum("ij,ij->i", sources, sources)
    for i0 in range(0, m, block):
        i1 = min(i0 + block, m)
        blk = points[i0:i1]
        # pairwise squared distances via the quadratic expansion; rounding
        # can push tiny values slightly negative, so clamp at zero
        r2 = np.einsum("ij,ij->i", blk, blk)[:, None] + s_sq[None, :] - 2.0 * (blk @ sources.T)
        np.maximum(r2, 0.0, out=r2)
        r2 += eps2
        if d > LOG_ACCUMULATION_DIM:
            diff = blk[:, None, :] - sources[None, :, :]
            with np.errstate(divide="ignore"):
                logw = np.log(np.abs(charges))[None, :] - 0.5 * (d - 1) * np.log(r2)
            shift = np.max(logw, axis=1)
            shift[~np.isfinite(shift)] = 0.0
            w = np.sign(charges)[None, :] * np.exp(logw - shift[:, None])
            udiff = diff / np.sqrt(r2)[:, :, None]
            vec[i0:i1] = inv_area * np.einsum("ij,ijk->ik", w, udiff)
            log_scale[i0:i1] = shift
        else:
            # sum_i c_i (p - s_i) = p * rowsum(C) - C @ S, all BLAS-friendly
            if d % 2 == 0:
                w = charges[None, :] / r2 ** (d // 2)
            else:
                w = charges[None, :] / (r2 ** (d // 2) * np.sqrt(r2))
            vec[i0:i1] = inv_area * (blk * w.sum(axis=1)[:, None] - w @ sources)
    return vec, log_scale


def superposition_field(points, sources, charges, field_epsilon: float = 0.0) -> np.ndarray:
    """Direct-sum field of many point charges at many evaluation points."""
    squeeze = np.asarray(points).ndim == 1
    vec, log_scale = scaled_superposition(points, sources, charges, field_epsilon)
    out = vec * np.exp(log_scale)[:, None]
    return out[0] if squeeze else out


def normalize_rows(vals, log_scale=None):
    """Unit rows plus a degeneracy mask.

    A row is degenerate when its direction is numerically meaningless
    (norm below TINY_FIELD_NORM in the given representation); rows whose
    absolute magnitude underflows but arrive pre-scaled (log_scale form)
    still carry a valid direction and are normalized normally.
    """
    vals = np.atleast_2d(np.asarray(vals, dtype=float))
    norms = np.linalg.norm(vals, axis=1)
    degenerate = norms < TINY_FIELD_NORM
    unit = np.zeros_like(vals)
    ok = ~degenerate
    unit[ok] = vals[ok] / norms[ok, None]
    return unit, degenerate


@dataclass(frozen=True)
class PlateSet:
    """A plate's charge distribution: weighted samples at a fixed z offset.

    Weights default to uniform 1/N so the total charge is exactly `sign`.
    """

    samples: np.ndarray
    z_offset: float
    sign: int
    weights: np.ndarray | None = None

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.size == 0:
            raise FieldError("plate samples must be nonempty")
        if not np.all(np.isfinite(samples)):
            raise FieldError("plate samples must be finite")
        if self.sign not in (+1, -1):
            raise FieldError("plate sign must be +1 or -1")
        if self.weights is None:
            weights = np.full(len(samples), 1.0 / len(samples))
        else:
            weights = np.asarray(self.weights, dtype=float)
            if weights.shape != (len(samples),):
                raise FieldError("weights must match the number of samples")
            if np.any(weights < 0):
                raise FieldError("weights must be nonnegative")
            total = weights.sum()
            if not np.isclose(total, 1.0, rtol=1e-9, atol=1e-12):
                raise FieldError("weights must sum to 1")
        samples.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def extended(self) -> np.ndarray:
        """Samples lifted to (D+1)-dim points at this plate's z offset."""
        cached = self.__dict__.get("_cached_extended")
        if cached is None:
            cached = np.hstack([self.samples, np.full((self.n, 1), self.z_offset)])
            cached.flags.writeable = False
            object.__setattr__(self, "_cached_extended", cached)
        return cached


@dataclass(frozen=True)
class EmpiricalField:
    """Two-plate field: positive plate at z=0, negative plate at z=plate_gap.

    `mc_subsample`, when set, makes each evaluation use a uniform
    without-replacement subsample of each plate with weights renormalized
    to total charge +-1 (the Monte Carlo estimate of the plate integrals).
    """

    plate_pos: PlateSet
    plate_neg: PlateSet
    field_epsilon: float = 1e-4
    mc_subsample: int | None = None

    def __post_init__(self):
        if self.plate_pos.sign != +1 or self.plate_neg.sign != -1:
            raise FieldError("plate signs must be +1 (pos) and -1 (neg)")
        if self.plate_pos.z_offset != 0.0:
            raise FieldError("positive plate must sit at z=0")
        if not self.plate_neg.z_offset > 0:
            raise FieldError("negative plate must sit at z=plate_gap > 0")
        if self.plate_pos.dim != self.plate_neg.dim:
            raise FieldError("plates must share the data dimension")
        if self.mc_subsample is not None and self.mc_subsample < 1:
            raise FieldError("mc_subsample must be a positive integer")

    @property
    def dim(self) -> int:
        return self.plate_pos.dim

    @property
    def plate_gap(self) -> float:
        return self.plate_neg.z_offset

    def _static_sources(self):
        cached = self.__dict__.get("_cached_sources")
        if cached is None:
            sources = np.vstack([self.plate_pos.extended(), self.plate_neg.extended()])
            charges = np.concatenate([self.plate_pos.weights, -self.plate_neg.weights])
            cached = (sources, charges, np.einsum("ij,ij->i", sources, sources))
            object.__setattr__(self, "_cached_sources", cached)
        return cached

    def _sources(self, stream):
        if self.mc_subsample is None:
            return self._static_sources()
        if stream is None:
            raise FieldError("mc_subsample requires a random stream")
        ext_p, w_p = self.plate_pos.extended(), self.plate_pos.weights
        ext_n, w_n = self.plate_neg.extended(), self.plate_neg.weights
        k_p = min(self.mc_subsample, len(ext_p))
        k_n = min(self.mc_subsample, len(ext_n))
        idx_p = stream.choice(len(ext_p), size=k_p, replace=False)
        idx_n = stream.choice(len(ext_n), size=k_n, replace=False)
        sources = np.vstack([ext_p[idx_p], ext_n[idx_n]])
        w_p = w_p[idx_p] / w_p[idx_p].sum()
        w_n = w_n[idx_n] / w_n[idx_n].sum()
        charges = np.concatenate([w_p, -w_n])
        return sources, charges

    def scaled_evaluate(self, points, stream=None):
        """(vec, log_scale) form of evaluate; see scaled_superposition."""
        sources, charges = self._sources(stream)
        return scaled_superposition(points, sources, charges, self.field_epsilon)

    def evaluate(self, points, stream=None) -> np.ndarray:
        """Field at one (D+1)-point or a batch of them, by direct summation."""
        squeeze = np.asarray(points).ndim == 1
        vec, log_scale = self.scaled_evaluate(points, stream)
        out = vec * np.exp(log_scale)[:, None]
        return out[0] if squeeze else out

    def normalized(self, points, stream=None):
        """Unit-norm field rows and the mask of degenerate (vanishing) rows."""
        vec, log_scale = self.scaled_evaluate(points, stream)
        return normalize_rows(vec, log_scale)

    def z_limits(self, x, plate_z: float, limit_epsilon: float, stream=None):
        """One-sided E_z limits just below and above a plate.

        Returns (E_z at z=plate_z - eps, E_z at z=plate_z + eps); batch
        inputs give arrays.
        """
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        zs_lo = np.full((len(x2), 1), plate_z - limit_epsilon)
        zs_hi = np.full((len(x2), 1), plate_z + limit_epsilon)
        e_lo = self.evaluate(np.hstack([x2, zs_lo]), stream)[:, -1]
        e_hi = self.evaluate(np.hstack([x2, zs_hi]), stream)[:, -1]
        if np.asarray(x).ndim == 1:
            return float(e_lo[0]), float(e_hi[0])
        return e_lo, e_hi

    def as_field_fn(self, stream=None):
        """Batch field callable (m, D+1) -> (m, D+1) for solvers and quadrature."""
        return lambda pts: self.evaluate(pts, stream)


def normalized_field(field: EmpiricalField, point, stream=None) -> np.ndarray:
    """E/|E| at a single point; the zero vector marks a degenerate field."""
    unit, degenerate = field.normalized(np.atleast_2d(point), stream)
    return unit[0]
