"""Truncated-Wigner ensembles: Gaussian clouds on the sphere and their mean dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classical import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    RADIUS2,
    PhasePoint,
    classical_energy,
    classical_imbalance,
    classical_occupations,
    integrate,
)
from .errors import IntegrationError, NumericalError
from .fock import ModelParams
from .parallel import map_chunks, split_indices
from .quantum import LdosHistogram, weighted_histogram
from .tables import write_table

MAX_FAILED_FRACTION = 0.01


@dataclass(frozen=True)
class CloudSpec:
    """Cloud of ``n_samples`` points around ``center``.

    ``width_mode="std"`` uses ``1/sqrt(2N)`` as the per-coordinate standard
    deviation; ``"variance"`` reads it as the variance instead.
    ``projection="radial"`` rescales the noisy vector onto the sphere,
    ``"tangent"`` first drops the noise component along the center.
    """

    center: PhasePoint
    n_particles: int
    n_samples: int = 2000
    seed: int = 0
    width_mode: str = "std"
    projection: str = "radial"

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be positive")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if self.width_mode not in ("std", "variance"):
            raise ValueError(f"unknown width_mode {self.width_mode!r}")
        if self.projection not in ("radial", "tangent"):
            raise ValueError(f"unknown projection {self.projection!r}")

    @property
    def sigma(self) -> float:
        s = 1.0 / np.sqrt(2.0 * self.n_particles)
        return s if self.width_mode == "std" else np.sqrt(s)


def sample_cloud(spec: CloudSpec) -> np.ndarray:
    """``(n_samples, 2L)`` array of points on the sphere; deterministic under ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    c = spec.center.vector
    noise = rng.normal(0.0, spec.sigma, size=(spec.n_samples, len(c)))
    if spec.projection == "tangent":
        noise -= np.outer(noise @ c, c) / RADIUS2
    x = c + noise
    return x * np.sqrt(RADIUS2 / np.sum(x * x, axis=1))[:, None]


# --- observables (picklable, act on (T, 2L) state arrays) --------------------


@dataclass(frozen=True)
class Occupation:
    site: int  # 0-based

    def __call__(self, states):
        return classical_occupations(states)[..., self.site]


@dataclass(frozen=True)
class ImbalancePart:
    imag: bool = False

    def __call__(self, states):
        I = classical_imbalance(states)
        return I.imag if self.imag else I.real


def standard_observables(n_sites: int, n_max_site: int) -> dict:
    obs = {f"n{k + 1}": Occupation(k) for k in range(n_sites)}
    obs["n_max"] = Occupation(n_max_site)
    obs["ReI"] = ImbalancePart(False)
    obs["ImI"] = ImbalancePart(True)
    return obs


# --- propagation ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    times: np.ndarray
    mean: dict = field(repr=False)
    stderr: dict = field(repr=False)
    n_effective: int
    n_failed: int

    def band(self, name: str, k: float = 3.0):
        """``(lower, upper)`` at ``k`` standard errors."""
        m, s = self.mean[name], self.stderr[name]
        return m - k * s, m + k * s


def _propagate_chunk(args):
    """Welford accumulation: ``(n_ok, n_failed, mean, M2)`` per observable."""
    points, times, names, observables, params, rtol, atol = args
    T = len(times)
    mean = {n: np.zeros(T) for n in names}
    m2 = {n: np.zeros(T) for n in names}
    ok = 0
    for x in points:
        try:
            traj = integrate(x, params, times=times, rtol=rtol, atol=atol)
        except IntegrationError:
            continue
        ok += 1
        for n in names:
            v = observables[n](traj.states)
            d = v - mean[n]
            mean[n] += d / ok
            m2[n] += d * (v - mean[n])
    return ok, len(points) - ok, mean, m2


def _merge(a, b):
    """Combine two ``(count, mean, M2)`` partial moments."""
    na, ma, sa = a
    nb, mb, sb = b
    n = na + nb
    if nb == 0:
        return a
    if na == 0:
        return b
    d = mb - ma
    return n, ma + d * (nb / n), sa + sb + d * d * (na * nb / n)


def propagate_ensemble(points, times, observables: dict, params: ModelParams,
                       rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                       workers: int = 1) -> EnsembleResult:
    """Pointwise mean and standard error of each observable over the cloud.

    Failed trajectories are dropped and counted; more than 1% failures is
    an error.  Chunks reduce through Welford moments merged pairwise.
    """
    points = np.atleast_2d(np.asarray(points, float))
    times = np.asarray(times, float)
    names = list(observables)
    chunks = split_indices(len(points), workers)
    parts = map_chunks(_propagate_chunk,
                       [(points[c], times, names, observables, params, rtol, atol) for c in chunks],
                       workers)
    n_ok = sum(p[0] for p in parts)
    n_bad = sum(p[1] for p in parts)
    if n_bad > MAX_FAILED_FRACTION * len(points) or n_ok < 2:
        raise NumericalError(f"{n_bad} of {len(points)} trajectories failed")
    mean, err = {}, {}
    for n in names:
        acc = (0, 0.0, 0.0)
        for p in parts:
            acc = _merge(acc, (p[0], p[2][n], p[3][n]))
        mean[n] = acc[1]
        err[n] = np.sqrt(np.maximum(acc[2], 0.0) / (n_ok - 1) / n_ok)
    return EnsembleResult(times, mean, err, n_ok, n_bad)


def ensemble_energy_histogram(points, params: ModelParams, bins=60) -> LdosHistogram:
    eps = classical_energy(np.atleast_2d(points), params)
    return weighted_histogram(eps, np.ones(len(eps)), bins)


def write_ensemble(path, result: EnsembleResult, names=None, fmt: str = "csv"):
    names = names or [n for n in result.mean if n.startswith("n")]
    cols = ["t"] + [f"mean_{n}" for n in names] + [f"stderr_{n}" for n in names]
    table = np.column_stack([result.times] + [result.mean[n] for n in names]
                            + [result.stderr[n] for n in names])
    write_table(path, cols, table, fmt)
