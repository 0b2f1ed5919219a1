"""Movement along field lines: z-stepped Euler transport, an adaptive
t-parameterized tracer with plate-crossing events, and the stochastic
forward/backward maps built on top of them."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import TransportError, seeded_stream
from .field import TINY_FIELD_NORM, EmpiricalField

TERMINATIONS = ("reached_target_plate", "continued_past_plate_then_returned",
                "step_limit", "field_degenerate")

# Relative f_z threshold below which the z-stepped update is rejected.
DEGENERACY_RATIO = 1e-8


@dataclass
class Trajectory:
    """One traced field line: visited points, how it ended, and every
    z=0 / z=plate_gap plane crossing as (point index, plate z)."""

    points: np.ndarray
    termination: str
    crossings: list = dc_field(default_factory=list)
    flags: list = dc_field(default_factory=list)
    n_field_evals: int = 0


@dataclass(frozen=True)
class TransportPolicy:
    """How lines are started and stopped.

    practical_stop_at_L: forward start, fixed z-grid Euler, stop at the
    first arrival at z=plate_gap. theoretical_stochastic: adaptive tracing
    with flux-ratio stopping at plate crossings and an optional stochastic
    forward/backward start.
    """

    mode: str = "practical_stop_at_L"
    direction: str = "forward_only"
    step: float = 0.3
    max_steps: int = 20_000

    def __post_init__(self):
        if self.mode not in ("practical_stop_at_L", "theoretical_stochastic"):
            raise TransportError(f"unknown policy mode {self.mode!r}")
        if self.direction not in ("forward_only", "bidirectional"):
            raise TransportError(f"unknown policy direction {self.direction!r}")
        if self.step <= 0:
            raise TransportError("policy step must be positive")
        if self.mode == "practical_stop_at_L" and self.direction != "forward_only":
            raise TransportError("practical_stop_at_L implies forward_only")


def euler_step(point, f, dtau: float) -> np.ndarray:
    """One z-parameterized Euler update: x += (f_x / f_z) dtau, z += dtau."""
    point = np.asarray(point, dtype=float)
    f = np.asarray(f, dtype=float)
    fz = f[-1]
    if abs(fz) < DEGENERACY_RATIO * np.linalg.norm(f) or fz == 0.0:
        raise TransportError("field z-component degenerate; cannot advance in z")
    out = point.copy()
    out[:-1] += f[:-1] / fz * dtau
    out[-1] += dtau
    return out


def stop_probability(e_z_minus: float, e_z_plus: float) -> float:
    """Probability of terminating at a z=plate_gap crossing.

    1 when the one-sided fields point at the plate from both sides (or
    either limit vanishes); otherwise the absorbed-flux fraction
    (E_z_minus - E_z_plus) / E_z_minus, clamped to [0, 1].
    """
    if not (np.isfinite(e_z_minus) and np.isfinite(e_z_plus)):
        raise TransportError("z limits must be finite")
    if e_z_minus == 0.0 or e_z_plus == 0.0 or (e_z_minus > 0) != (e_z_plus > 0):
        return 1.0
    return float(min(1.0, max(0.0, (e_z_minus - e_z_plus) / e_z_minus)))


def direction_probability(e_z_plus: float, e_z_minus: float) -> float:
    """Probability of starting a line forward (toward the target plate).

    1 when both one-sided fields at the source plate share a sign (backward
    movement impossible); otherwise the forward-flux fraction
    E_z_plus / (E_z_plus + |E_z_minus|), clamped to [0, 1].
    """
    if not (np.isfinite(e_z_minus) and np.isfinite(e_z_plus)):
        raise TransportError("z limits must be finite")
    if e_z_minus >= 0.0:
        return 1.0  # backward movement impossible
    if e_z_plus <= 0.0:
        return 0.0  # no forward flux
    return float(min(1.0, e_z_plus / (e_z_plus + abs(e_z_minus))))


def _as_batch_fn(field_fn):
    def call(pts):
        return np.atleast_2d(np.asarray(field_fn(np.atleast_2d(pts)), dtype=float))
    return call


def trace_line_z(start, field_fn, dtau: float, plate_gap: float) -> Trajectory:
    """Fixed z-grid Euler trace from the source plate to z=plate_gap.

    The grid lands on plate_gap exactly and consumes exactly
    round((plate_gap - z0)/dtau) field evaluations.
    """
    fn = _as_batch_fn(field_fn)
    point = np.asarray(start, dtype=float).copy()
    z0 = point[-1]
    span = plate_gap - z0
    if span <= 0:
        raise TransportError("start must lie below the target plate")
    n = int(round(span / dtau))
    if n < 1 or not np.isclose(n * dtau, span, rtol=1e-9, atol=1e-12):
        raise TransportError("dtau must evenly divide the distance to the plate")
    dz = span / n
    points = [point.copy()]
    for k in range(n):
        f = fn(point)[0]
        fz = f[-1]
        if abs(fz) < DEGENERACY_RATIO * np.linalg.norm(f) or fz == 0.0:
            return Trajectory(np.array(points), "field_degenerate", [], [], k + 1)
        point[:-1] += f[:-1] / fz * dz
        point[-1] = z0 + (k + 1) * dz
        points.append(point.copy())
    traj = Trajectory(np.array(points), "reached_target_plate", n_field_evals=n)
    traj.crossings.append((len(points) - 1, plate_gap))
    return traj


def trace_batch_z(starts_x, field_fn, dtau: float, plate_gap: float):
    """Vectorized practical transport for a batch of source-plate points.

    Returns (history (n+1, m, D+1), terminations (m,) object array). Lines
    hitting a degenerate f_z freeze in place and are marked.
    """
    starts_x = np.atleast_2d(np.asarray(starts_x, dtype=float))
    m = len(starts_x)
    n = int(round(plate_gap / dtau))
    if n < 1 or not np.isclose(n * dtau, plate_gap, rtol=1e-9, atol=1e-12):
        raise TransportError("dtau must evenly divide the distance to the plate")
    dz = plate_gap / n
    state = np.hstack([starts_x, np.zeros((m, 1))])
    history = np.empty((n + 1, m, starts_x.shape[1] + 1))
    history[0] = state
    active = np.ones(m, dtype=bool)
    terminations = np.array(["reached_target_plate"] * m, dtype=object)
    for k in range(n):
        if np.any(active):
            f = np.atleast_2d(np.asarray(field_fn(state[active]), dtype=float))
            norms = np.linalg.norm(f, axis=1)
            fz = f[:, -1]
            bad = (np.abs(fz) < DEGENERACY_RATIO * norms) | (fz == 0.0)
            idx = np.flatnonzero(active)
            terminations[idx[bad]] = "field_degenerate"
            active[idx[bad]] = False
            good = idx[~bad]
            fg = f[~bad]
            state[good, :-1] += fg[:, :-1] / fg[:, -1:] * dz
            state[good, -1] = (k + 1) * dz
        history[k + 1] = state
    return history, terminations


# ---------------------------------------------------------------------------
# Adaptive embedded Runge-Kutta tracer with plane-crossing events.

# Cash-Karp 4(5) tableau; the 5th-order solution is propagated.
_CK_C = (1 / 5, 3 / 10, 3 / 5, 1.0, 7 / 8)
_CK_B = (
    (1 / 5,),
    (3 / 40, 9 / 40),
    (3 / 10, -9 / 10, 6 / 5),
    (-11 / 54, 5 / 2, -70 / 27, 35 / 27),
    (1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096),
)
_CK_W5 = (37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771)
_CK_W4 = (2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4)


def _hermite(y0, k0, y1, k1, h, s):
    s2, s3 = s * s, s * s * s
    return ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * k0
            + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * k1)


def _locate_crossing(y0, k0, y1, k1, h, plate):
    """Bisection on the cubic Hermite interpolant's z-component."""
    g0 = y0[-1] - plate
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        gm = _hermite(y0[-1], k0[-1], y1[-1], k1[-1], h, mid) - plate
        if (gm > 0) == (g0 > 0):
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    s = 0.5 * (lo + hi)
    return s, _hermite(y0, k0, y1, k1, h, s)


def trace_line_t(start, field_fn, direction: int = +1, *, plate_gap: float,
                 rtol: float = 1e-4, atol: float = 1e-4, max_steps: int = 20_000,
                 limit_epsilon: float | None = None, on_crossing=None,
                 expect_positive_ez: bool = False) -> Trajectory:
    """Adaptive trace of d(point)/dt = direction * field(point).

    Crossings of z=0 and z=plate_gap are located on each accepted step by
    sign change plus Hermite-interpolant bisection and reported to
    `on_crossing(point, plate, going_up) -> bool` (True = stop there).
    By default the line stops at its first z=plate_gap arrival. Double
    crossings of one plane inside a single accepted step are not detected;
    step sizes near the plates are small enough in practice that this
    never matters at the solver tolerance.
    """
    fn = _as_batch_fn(field_fn)
    if limit_epsilon is None:
        limit_epsilon = plate_gap * 1e-3
    if on_crossing is None:
        def on_crossing(point, plate, going_up):
            return plate == plate_gap

    y = np.asarray(start, dtype=float).copy()
    dim = len(y)
    evals = 0

    def g(p):
        nonlocal evals
        evals += 1
        return direction * fn(p)[0]

    k_start = g(y)
    speed = np.linalg.norm(k_start)
    if speed < TINY_FIELD_NORM:
        return Trajectory(np.array([y]), "field_degenerate", [], [], evals)
    h = 0.01 * plate_gap / max(speed, 1e-12)

    points = [y.copy()]
    crossings: list = []
    flags: list = []
    plate_hits = 0  # z=plate_gap crossings continued past

    for _ in range(max_steps):
        if expect_positive_ez and limit_epsilon < y[-1] < plate_gap - limit_epsilon:
            ez = direction * k_start[-1]
            if ez <= 0 and "negative_ez_between_plates" not in flags:
                flags.append("negative_ez_between_plates")

        # embedded step attempt
        ks = [k_start]
        for row in _CK_B:
            yi = y + h * sum(c * k for c, k in zip(row, ks))
            ks.append(g(yi))
        y5 = y + h * sum(w * k for w, k in zip(_CK_W5, ks))
        y4 = y + h * sum(w * k for w, k in zip(_CK_W4, ks))
        err = np.abs(y5 - y4)
        tol = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        ratio = float(np.max(err / tol))
        if not np.isfinite(ratio):
            h *= 0.2
            continue
        if ratio > 1.0:
            h *= max(0.1, 0.9 * ratio ** -0.25)
            continue

        k_end = g(y5)
        if np.linalg.norm(k_end) < TINY_FIELD_NORM:
            points.append(y5.copy())
            return Trajectory(np.array(points), "field_degenerate", crossings,
                              flags, evals)

        # plane crossings on this step, earliest first
        events = []
        for plate in (0.0, plate_gap):
            g0, g1 = y[-1] - plate, y5[-1] - plate
            if g0 == 0.0 or (g0 > 0) == (g1 > 0):
                continue
            s, y_ev = _locate_crossing(y, k_start, y5, k_end, h, plate)
            events.append((s, plate, y_ev))
        for s, plate, y_ev in sorted(events):
            y_ev = y_ev.copy()
            y_ev[-1] = plate
            points.append(y_ev)
            crossings.append((len(points) - 1, plate))
            going_up = y5[-1] > y[-1]
            if on_crossing(y_ev, plate, going_up):
                term = ("reached_target_plate" if plate == plate_gap and plate_hits == 0
                        else "continued_past_plate_then_returned")
                return Trajectory(np.array(points), term, crossings, flags, evals)
            if plate == plate_gap:
                plate_hits += 1

        y = y5
        k_start = k_end
        points.append(y.copy())
        h *= min(5.0, 0.9 * max(ratio, 1e-10) ** -0.2)

    return Trajectory(np.array(points), "step_limit", crossings, flags, evals)


# ---------------------------------------------------------------------------
# Stochastic maps.

def stochastic_map(x_plus, field: EmpiricalField, policy: TransportPolicy, stream,
                   limit_epsilon: float | None = None,
                   rtol: float = 1e-4, atol: float = 1e-4):
    """Transport one source-plate point to the target plate.

    practical_stop_at_L: z-stepped Euler from (x, 0), stop at the first
    z=plate_gap arrival. theoretical_stochastic: start forward or backward
    by the flux-ratio direction probability, trace adaptively, and at each
    z=plate_gap crossing stop with the flux-ratio stop probability.
    Returns (mapped x, Trajectory).
    """
    x_plus = np.asarray(x_plus, dtype=float)
    gap = field.plate_gap
    if limit_epsilon is None:
        limit_epsilon = gap * 1e-3
    eval_stream = stream if field.mc_subsample is not None else None
    field_fn = field.as_field_fn(eval_stream)

    if policy.mode == "practical_stop_at_L":
        start = np.append(x_plus, 0.0)
        traj = trace_line_z(start, field_fn, policy.step, gap)
        return traj.points[-1][:-1].copy(), traj

    e_lo, e_hi = field.z_limits(x_plus, 0.0, limit_epsilon, eval_stream)
    if policy.direction == "bidirectional":
        forward = stream.uniform() < direction_probability(e_hi, e_lo)
    else:
        forward = True
    start = np.append(x_plus, limit_epsilon if forward else -limit_epsilon)

    def on_crossing(point, plate, going_up):
        if plate != gap:
            return False
        lo, hi = field.z_limits(point[:-1], gap, limit_epsilon, eval_stream)
        return stream.uniform() < stop_probability(lo, hi)

    traj = trace_line_t(start, field_fn, +1, plate_gap=gap, rtol=rtol, atol=atol,
                        max_steps=policy.max_steps, limit_epsilon=limit_epsilon,
                        on_crossing=on_crossing, expect_positive_ez=True)
    return traj.points[-1][:-1].copy(), traj


@dataclass
class MapResult:
    mapped: np.ndarray
    ok: np.ndarray
    trajectories: list
    failures: list


def _line_stream(seed: int, x) -> np.random.Generator:
    # keyed by point content, so permuting a batch permutes the outputs
    digest = hashlib.sha256(np.ascontiguousarray(x, dtype=float).tobytes()).hexdigest()
    return seeded_stream(seed, f"transport/{digest}")


def map_batch(points, *, field: EmpiricalField, policy: TransportPolicy, seed: int = 0,
              limit_epsilon: float | None = None, n_workers: int = 1) -> MapResult:
    """Transport a batch of source points independently through plate fields.

    Per-line randomness is keyed by the point's content, so results are
    deterministic for a given seed and equivariant under reordering of the
    batch. Per-line failures are recorded and the batch continues. For a
    trained network use map_batch_fn instead.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0:
        raise TransportError("empty batch")
    m, d = points.shape
    success = ("reached_target_plate", "continued_past_plate_then_returned")

    gap = field.plate_gap
    if policy.mode == "practical_stop_at_L" and field.mc_subsample is None:
        history, terms = trace_batch_z(points, field.as_field_fn(), policy.step, gap)
        return _batch_result_from_history(history, terms, gap, success)

    trajectories: list = [None] * m
    mapped = np.full((m, d), np.nan)

    def run(i):
        stream = _line_stream(seed, points[i])
        return stochastic_map(points[i], field, policy, stream, limit_epsilon)

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run, range(m)))
    else:
        results = [run(i) for i in range(m)]
    failures = []
    ok = np.zeros(m, dtype=bool)
    for i, (x_out, traj) in enumerate(results):
        trajectories[i] = traj
        if traj.termination in success:
            mapped[i] = x_out
            ok[i] = True
        else:
            failures.append((i, traj.termination))
    return MapResult(mapped, ok, trajectories, failures)


def map_batch_fn(points, field_fn, plate_gap: float, policy: TransportPolicy) -> MapResult:
    """Practical-mode transport against a batch field callable (a network)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0:
        raise TransportError("empty batch")
    if policy.mode != "practical_stop_at_L":
        raise TransportError("a bare field_fn only supports practical transport")
    history, terms = trace_batch_z(points, field_fn, policy.step, plate_gap)
    success = ("reached_target_plate", "continued_past_plate_then_returned")
    return _batch_result_from_history(history, terms, plate_gap, success)


def _batch_result_from_history(history, terms, plate_gap, success) -> MapResult:
    n_steps, m, _ = history.shape
    trajectories = []
    mapped = np.full((m, history.shape[2] - 1), np.nan)
    ok = np.zeros(m, dtype=bool)
    failures = []
    for i in range(m):
        term = str(terms[i])
        traj = Trajectory(history[:, i, :].copy(), term, n_field_evals=n_steps - 1)
        if term in success:
            traj.crossings.append((n_steps - 1, plate_gap))
            mapped[i] = history[-1, i, :-1]
            ok[i] = True
        else:
            failures.append((i, term))
        trajectories.append(traj)
    return MapResult(mapped, ok, trajectories, failures)
