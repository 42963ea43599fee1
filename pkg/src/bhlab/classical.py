"""Classical mean-field limit of the ring: flow, chaos indicators and shell sampling.

Phase points are handled as arrays ``x = [q_1..q_L, p_1..p_L]`` constrained
to the sphere ``sum(q**2 + p**2) == 2``; :class:`PhasePoint` is the checked
public wrapper.  Energies are intensive (``eps = E / N``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import _kernels
from .errors import EnergyRangeError, IntegrationError, SamplingError
from .fock import ModelParams
from .tables import write_table
from .parallel import map_chunks, split_indices

RADIUS2 = 2.0
DEFAULT_RTOL = 1e-13
DEFAULT_ATOL = 1e-15
REGULAR_THRESHOLD = 0.01


@dataclass(frozen=True, eq=False)
class PhasePoint:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if q.shape != p.shape or q.ndim != 1:
            raise ValueError("q and p must be 1-D arrays of equal length")
        if not abs(np.sum(q * q + p * p) - RADIUS2) <= 1e-10:  # also rejects NaN
            raise ValueError(f"point violates the constraint: sum(q^2+p^2) = {np.sum(q*q+p*p)!r}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @classmethod
    def projected(cls, q, p) -> "PhasePoint":
        """Radially rescale arbitrary coordinates onto the constraint sphere."""
        x = np.concatenate([np.asarray(q, float), np.asarray(p, float)])
        r2 = np.sum(x * x)
        if not (np.isfinite(r2) and r2 > 0):
            raise ValueError("cannot project a zero or non-finite vector onto the sphere")
        x *= np.sqrt(RADIUS2 / r2)
        n = len(x) // 2
        return cls(x[:n], x[n:])

    @classmethod
    def from_vector(cls, x) -> "PhasePoint":
        x = np.asarray(x, float)
        n = len(x) // 2
        return cls(x[:n], x[n:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @property
    def n_sites(self) -> int:
        return len(self.q)


def _as_vector(x) -> np.ndarray:
    return x.vector if isinstance(x, PhasePoint) else np.asarray(x, dtype=float)


def _split(x):
    n = x.shape[-1] // 2
    return x[..., :n], x[..., n:]


def classical_energy(x, params: ModelParams):
    """``sum_i [-J (q_{i+1} q_i + p_{i+1} p_i) + U/4 (q_i^2 + p_i^2)^2]``, vectorized over leading axes."""
    q, p = _split(_as_vector(x))
    hop = np.sum(np.roll(q, -1, axis=-1) * q + np.roll(p, -1, axis=-1) * p, axis=-1)
    r2 = q * q + p * p
    return -params.J * hop + 0.25 * params.U * np.sum(r2 * r2, axis=-1)


def hamilton_vector_field(x, params: ModelParams) -> np.ndarray:
    q, p = _split(_as_vector(x))
    r2 = q * q + p * p
    qn = np.roll(q, -1, axis=-1) + np.roll(q, 1, axis=-1)
    pn = np.roll(p, -1, axis=-1) + np.roll(p, 1, axis=-1)
    qdot = -params.J * pn + params.U * p * r2
    pdot = params.J * qn - params.U * q * r2
    return np.concatenate([qdot, pdot], axis=-1)


def energy_gradient(x, params: ModelParams) -> np.ndarray:
    """``(dH/dq, dH/dp)``."""
    f = hamilton_vector_field(x, params)
    qdot, pdot = _split(f)
    return np.concatenate([-pdot, qdot], axis=-1)


def classical_occupations(x) -> np.ndarray:
    q, p = _split(_as_vector(x))
    return 0.5 * (q * q + p * p)


def classical_imbalance(x):
    n = classical_occupations(x)
    L = n.shape[-1]
    return n @ np.exp(2j * np.pi * np.arange(L) / L)


# --- trajectories -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray = field(repr=False)  # (len(times), 2L)
    energy_drift: float
    constraint_drift: float
    n_steps: int

    def points(self) -> list[PhasePoint]:
        return [PhasePoint.from_vector(s) for s in self.states]

    @property
    def occupations(self) -> np.ndarray:
        return classical_occupations(self.states)

    @property
    def imbalance(self) -> np.ndarray:
        return classical_imbalance(self.states)


def _flow_times(t_max=None, times=None, dt=1.0):
    if times is None:
        if t_max is None:
            raise ValueError("give t_max or times")
        n = int(round(t_max / dt))
        times = dt * np.arange(n + 1)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise ValueError("sample times must be non-negative and strictly increasing")
    return times


def integrate(x0, params: ModelParams, t_max: float | None = None, times=None, dt: float = 1.0,
              rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
              max_steps: int = 10**9) -> Trajectory:
    """Adaptive 8th-order Runge-Kutta solution of Hamilton's equations.

    The state is reported at ``times`` (or every ``dt`` up to ``t_max``);
    steps are clipped to land on each requested time.
    """
    y0 = _as_vector(x0).copy()
    times = _flow_times(t_max, times, dt)
    n = len(y0) // 2
    out, t_end, steps, status = _kernels.integrate_grid(
        y0, times, float(params.J), float(params.U), n, rtol, atol, max_steps
    )
    if status == _kernels.STEP_UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={t_end:.6g}", t=t_end)
    if status == _kernels.MAX_STEPS:
        raise IntegrationError(f"step budget exhausted at t={t_end:.6g}", t=t_end)
    if status == _kernels.NON_FINITE:
        raise IntegrationError(f"non-finite state at t={t_end:.6g}", t=t_end)
    e = classical_energy(out, params)
    e0 = classical_energy(y0, params)
    c = np.sum(out * out, axis=1)
    return Trajectory(
        times=times,
        states=out,
        energy_drift=float(np.max(np.abs(e - e0)) / max(abs(e0), 1e-300)),
        constraint_drift=float(np.max(np.abs(c - RADIUS2))),
        n_steps=int(steps),
    )


@dataclass(frozen=True)
class TimeAverage:
    value: float | complex
    window_values: np.ndarray
    window_edges: np.ndarray


def long_time_average(trajectory: Trajectory, observable, n_windows: int = 10,
                      t_start: float = 0.0) -> TimeAverage:
    """Trapezoidal time average of ``observable(states)`` over ``[t_start, t_end]``.

    ``observable`` maps the ``(T, 2L)`` state array to a length-``T`` series.
    Equal-length window averages are returned for convergence checks.
    """
    t = trajectory.times
    vals = np.asarray(observable(trajectory.states))
    keep = t >= t_start
    t, vals = t[keep], vals[keep]
    if len(t) < 2:
        raise ValueError("need at least two samples inside the averaging range")
    tau = t[-1] - t[0]
    value = trapezoid(vals, t) / tau
    edges = np.linspace(t[0], t[-1], n_windows + 1)
    windows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (t >= lo) & (t <= hi)
        windows.append(trapezoid(vals[m], t[m]) / (t[m][-1] - t[m][0]) if m.sum() > 1 else np.nan)
    return TimeAverage(value, np.array(windows), edges)


def write_trajectory(path, trajectory: Trajectory, params: ModelParams, fmt: str = "csv"):
    q, p = _split(trajectory.states)
    eps = classical_energy(trajectory.states, params)
    imb = trajectory.imbalance
    L = q.shape[1]
    cols = (["t"] + [f"q{i+1}" for i in range(L)] + [f"p{i+1}" for i in range(L)]
            + ["eps"] + [f"n{i+1}" for i in range(L)] + ["ReI", "ImI"])
    table = np.column_stack([trajectory.times, q, p, eps, trajectory.occupations, imb.real, imb.imag])
    write_table(path, cols, table, fmt)


# --- Lyapunov exponents ------------------------------------------------------


@dataclass(frozen=True)
class LyapunovResult:
    value: float
    converged: bool
    history: np.ndarray = field(repr=False)  # running estimate after every interval
    times: np.ndarray = field(repr=False)


def tangent_direction(x, rng: np.random.Generator) -> np.ndarray:
    """Random unit deviation tangent to the constraint sphere."""
    x = _as_vector(x)
    d = rng.standard_normal(x.shape)
    d -= (d @ x) / (x @ x) * x
    return d / np.linalg.norm(d)


def lyapunov_exponent(x0, params: ModelParams, t_max: float = 1e4, renorm_interval: float = 1.0,
                      rtol: float = 1e-8, atol: float = 1e-10, seed: int = 0,
                      deviation=None) -> LyapunovResult:
    """Largest Lyapunov exponent by tangent dynamics with periodic renormalization.

    ``converged`` is true when the running estimate changed by at most 10 %
    (or by less than 1e-3 in absolute terms) over the last fifth of the run.
    """
    y0 = _as_vector(x0).copy()
    n = len(y0) // 2
    d0 = tangent_direction(y0, np.random.default_rng(seed)) if deviation is None else np.asarray(deviation, float)
    logs, _, n_int, _, status = _kernels.lyapunov_run(
        y0, d0, float(t_max), float(renorm_interval), float(params.J), float(params.U), n, rtol, atol, 10**10
    )
    if status != _kernels.OK:
        raise IntegrationError(f"tangent integration failed at t={n_int * renorm_interval:.6g}",
                               t=n_int * renorm_interval)
    times = renorm_interval * np.arange(1, n_int + 1)
    history = np.cumsum(logs) / times
    value = float(history[-1])
    ref = history[int(0.8 * (len(history) - 1))]
    converged = abs(value - ref) <= 0.1 * abs(value) or abs(value - ref) < 1e-3
    return LyapunovResult(value, bool(converged), history, times)


# --- energy shell -------------------------------------------------------------

# extremes of the L=4, J=1, U=-10 landscape as located by find_critical_points
_KNOWN_RANGE = {(4, 1.0, -10.0): (-10.100376908326906, -0.5)}


def energy_range(params: ModelParams, n_starts: int = 200, seed: int = 0) -> tuple[float, float]:
    """Minimum and maximum of the classical energy on the constraint sphere."""
    from .critical import find_critical_points

    key = (params.n_sites, float(params.J), float(params.U))
    if key not in _KNOWN_RANGE:
        pts = find_critical_points(params, n_starts=n_starts, rng_seed=seed)
        _KNOWN_RANGE[key] = (min(c.eps for c in pts), max(c.eps for c in pts))
    return _KNOWN_RANGE[key]


def random_sphere_points(rng: np.random.Generator, count: int, n_sites: int) -> np.ndarray:
    x = rng.standard_normal((count, 2 * n_sites))
    x *= np.sqrt(RADIUS2 / np.sum(x * x, axis=1))[:, None]
    return x


def refine_to_shell(x, eps: float, params: ModelParams, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Move points along the sphere until ``H == eps``.

    Each step is a Newton move along the gradient component tangent to the
    sphere, followed by radial renormalization.
    """
    x = np.array(x, dtype=float, copy=True)
    for _ in range(max_iter):
        h = classical_energy(x, params) - eps
        if np.all(np.abs(h) <= tol):
            break
        g = energy_gradient(x, params)
        g -= (np.sum(g * x, axis=-1) / RADIUS2)[..., None] * x
        g2 = np.sum(g * g, axis=-1)
        step = np.where(g2 > 0, h / np.where(g2 > 0, g2, 1.0), 0.0)
        x -= step[..., None] * g
        x *= np.sqrt(RADIUS2 / np.sum(x * x, axis=-1))[..., None]
    return x


@dataclass(frozen=True, eq=False)
class ShellSample:
    points: np.ndarray  # (count, 2L)
    energies: np.ndarray
    acceptance_rate: float
    n_drawn: int


def sample_energy_shell(eps: float, params: ModelParams, count: int, tol: float = 1e-4,
                        rng_seed: int = 0, refine: bool = False, refine_window: float = 0.05,
                        batch: int = 200_000, max_draws: int = 5 * 10**8) -> ShellSample:
    """Uniform-direction rejection sampling of the shell ``|H - eps| <= tol``.

    With ``refine`` the acceptance window is widened to ``refine_window`` and
    accepted points are then moved along the sphere onto the shell.
    """
    lo, hi = energy_range(params)
    if not lo - tol <= eps <= hi + tol:
        raise EnergyRangeError(f"eps={eps} outside the attainable range [{lo:.4f}, {hi:.4f}]")
    rng = np.random.default_rng(rng_seed)
    window = max(tol, refine_window) if refine else tol
    kept, drawn, have = [], 0, 0
    while have < count:
        if drawn >= max_draws:
            raise SamplingError(
                f"collected {have}/{count} shell points at eps={eps} after {drawn} draws"
            )
        x = random_sphere_points(rng, batch, params.n_sites)
        drawn += batch
        e = classical_energy(x, params)
        sel = x[np.abs(e - eps) <= window]
        if refine and len(sel):
            sel = refine_to_shell(sel, eps, params)
            sel = sel[np.abs(classical_energy(sel, params) - eps) <= tol]
        kept.append(sel)
        have += len(sel)
    pts = np.vstack(kept)[:count]
    return ShellSample(pts, classical_energy(pts, params), have / drawn, drawn)


def count_clusters(points_2d: np.ndarray, gap: float = 0.1) -> int:
    """Number of single-linkage clusters at distance threshold ``gap``."""
    pts = np.asarray(points_2d, dtype=float)
    if len(pts) == 0:
        return 0
    tree = cKDTree(pts)
    adj = tree.sparse_distance_matrix(tree, gap, output_type="coo_matrix")
    n, _ = connected_components(adj, directed=False)
    return int(n)


# --- regularity fraction ------------------------------------------------------


@dataclass(frozen=True)
class RegularityResult:
    eps: float
    f_reg: float
    lambdas: np.ndarray = field(repr=False)
    converged: np.ndarray = field(repr=False)
    threshold: float
    acceptance_rate: float


def _lyap_batch(args):
    pts, params, t_max, dt, rtol, atol, seeds = args
    out = []
    for x, s in zip(pts, seeds):
        r = lyapunov_exponent(x, params, t_max, dt, rtol, atol, seed=int(s))
        out.append((r.value, r.converged))
    return out


def lyapunov_samples(points: np.ndarray, params: ModelParams, t_max: float = 1e4,
                     renorm_interval: float = 1.0, rtol: float = 1e-8, atol: float = 1e-10,
                     seed: int = 0, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Lyapunov exponents of many initial points; per-point seeds derive from ``(seed, index)``."""
    points = np.asarray(points, float)
    seeds = np.array([np.random.SeedSequence([seed, i]).generate_state(1)[0] for i in range(len(points))])
    chunks = split_indices(len(points), workers)
    results = map_chunks(
        _lyap_batch,
        [(points[c], params, t_max, renorm_interval, rtol, atol, seeds[c]) for c in chunks],
        workers,
    )
    lam = np.empty(len(points))
    conv = np.empty(len(points), dtype=bool)
    for c, res in zip(chunks, results):
        lam[c] = [r[0] for r in res]
        conv[c] = [r[1] for r in res]
    return lam, conv


def fraction_regular(eps: float, params: ModelParams, n_samples: int = 10**4,
                     threshold: float = REGULAR_THRESHOLD, t_max: float = 1e4,
                     renorm_interval: float = 1.0, shell_tol: float = 1e-4, refine: bool = False,
                     rtol: float = 1e-8, atol: float = 1e-10, seed: int = 0,
                     workers: int = 1) -> RegularityResult:
    shell = sample_energy_shell(eps, params, n_samples, tol=shell_tol, rng_seed=seed, refine=refine)
    lam, conv = lyapunov_samples(shell.points, params, t_max, renorm_interval, rtol, atol, seed, workers)
    f = float(np.mean(lam < threshold))
    return RegularityResult(eps, f, lam, conv, threshold, shell.acceptance_rate)
