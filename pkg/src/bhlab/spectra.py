"""Short-range spectral statistics: unfolding, spacings and Berry-Robnik fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc

from .tables import write_table

MIN_LEVELS = 50
MIN_FIT_SPACINGS = 200


class UnfoldingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class UnfoldedSpectrum:
    raw: np.ndarray
    unfolded: np.ndarray
    fit_degree: int = 5
    trimmed_fraction: float = 0.02

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.unfolded)


@dataclass(frozen=True, eq=False)
class SpacingSet:
    spacings: np.ndarray
    provenance: tuple = ()

    def __post_init__(self):
        s = np.asarray(self.spacings, float)
        if np.any(s < 0):
            raise ValueError("spacings must be non-negative")
        object.__setattr__(self, "spacings", s)

    @classmethod
    def pooled(cls, sets) -> "SpacingSet":
        sets = list(sets)
        return cls(np.concatenate([s.spacings for s in sets]) if sets else np.empty(0),
                   tuple(p for s in sets for p in s.provenance))


def unfold(eigenvalues, degree: int = 5, trim: float = 0.02) -> UnfoldedSpectrum:
    """Polynomial fit of the midpoint staircase ``N(E_n) = n + 1/2``.

    ``trim`` drops that fraction of levels at each end before fitting; the
    returned sequences hold only the kept levels.
    """
    E = np.sort(np.asarray(eigenvalues, float))
    cut = int(np.floor(trim * len(E)))
    E = E[cut:len(E) - cut]
    if len(E) < MIN_LEVELS:
        raise UnfoldingError(f"{len(E)} levels after trimming, need {MIN_LEVELS}")
    stair = np.arange(len(E)) + 0.5
    # Polynomial.fit maps the energies to [-1, 1] internally, which keeps
    # the normal equations well conditioned
    poly = np.polynomial.Polynomial.fit(E, stair, degree)
    u = poly(E)
    if np.any(np.diff(u) <= 0):
        raise UnfoldingError("fitted staircase is not monotone over the levels")
    return UnfoldedSpectrum(E, u, degree, trim)


# --- Berry-Robnik -------------------------------------------------------------


def _check(s, rho):
    s = np.asarray(s, float)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho={rho} outside [0, 1]")
    if np.any(s < 0):
        raise ValueError("spacings must be non-negative")
    return s


def berry_robnik_pdf(s, rho: float):
    s = _check(s, rho)
    rb = 1.0 - rho
    return (rho ** 2 * np.exp(-rho * s) * erfc(0.5 * np.sqrt(np.pi) * rb * s)
            + (2 * rho * rb + 0.5 * np.pi * rb ** 3 * s)
            * np.exp(-rho * s - 0.25 * np.pi * rb ** 2 * s ** 2))


def berry_robnik_cdf(s, rho: float):
    """Closed form ``1 - exp(-rho s) [rho erfc(sqrt(pi) rb s / 2) + rb exp(-pi rb^2 s^2 / 4)]``."""
    s = _check(s, rho)
    rb = 1.0 - rho
    return 1.0 - np.exp(-rho * s) * (rho * erfc(0.5 * np.sqrt(np.pi) * rb * s)
                                     + rb * np.exp(-0.25 * np.pi * rb ** 2 * s ** 2))


def wigner_surmise_sample(rng: np.random.Generator, size) -> np.ndarray:
    """Inverse-CDF draws from ``(pi s / 2) exp(-pi s^2 / 4)``."""
    u = rng.random(size)
    return np.sqrt(-4.0 / np.pi * np.log1p(-u))


@dataclass(frozen=True)
class BerryRobnikFit:
    rho: float
    residual: float  # sup-norm CDF misfit
    n_spacings: int
    flagged: bool = False


def fit_regularity(spacings) -> BerryRobnikFit:
    """Least-squares fit of the empirical CDF at the sorted sample points."""
    s = spacings.spacings if isinstance(spacings, SpacingSet) else np.asarray(spacings, float)
    s = np.sort(s)
    n = len(s)
    if n == 0:
        raise ValueError("no spacings to fit")
    degenerate = np.ptp(s) == 0
    emp = (np.arange(1, n + 1) - 0.5) / n

    def loss(rho):
        return np.sum((berry_robnik_cdf(s, rho) - emp) ** 2)

    res = minimize_scalar(loss, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-6})
    rho = float(res.x)
    # the bounded search never evaluates the end points themselves
    for edge in (0.0, 1.0):
        if loss(edge) <= loss(rho):
            rho = edge
    upper = np.arange(1, n + 1) / n
    model = berry_robnik_cdf(s, rho)
    resid = float(max(np.max(np.abs(model - upper)), np.max(np.abs(model - (upper - 1.0 / n)))))
    return BerryRobnikFit(rho, resid, n, bool(degenerate or n < MIN_FIT_SPACINGS))


# --- windowed scan --------------------------------------------------------------


@dataclass(frozen=True)
class WindowSpec:
    width: float = 0.4
    overlap: float = 0.5
    eps_min: float = -7.0
    eps_max: float | None = None
    pad: float = 0.4  # extra range on each side used only for the unfolding fit
    degree: int = 5
    trim: float = 0.02
    min_spacings: int = 100


@dataclass(frozen=True)
class ScanPoint:
    eps_center: float
    rho: float
    residual: float
    n_spacings: int


@dataclass(frozen=True, eq=False)
class ScanResult:
    points: list
    skipped: list = field(default_factory=list)  # (eps_center, reason)

    @property
    def eps(self) -> np.ndarray:
        return np.array([p.eps_center for p in self.points])

    @property
    def rho(self) -> np.ndarray:
        return np.array([p.rho for p in self.points])


def window_spacings(levels, lo: float, hi: float, spec: WindowSpec, label=None) -> SpacingSet:
    """Unfolded spacings of one level sequence whose both ends lie in ``[lo, hi)``.

    The fit uses the levels in the padded range ``[lo - pad, hi + pad)``.
    """
    E = np.sort(np.asarray(levels, float))
    sel = E[(E >= lo - spec.pad) & (E < hi + spec.pad)]
    uf = unfold(sel, spec.degree, spec.trim)
    inside = (uf.raw >= lo) & (uf.raw < hi)
    both = inside[:-1] & inside[1:]
    return SpacingSet(uf.spacings[both], (label,) if label is not None else ())


def windowed_regularity_scan(subsequences: dict, spec: WindowSpec = WindowSpec()) -> ScanResult:
    """Berry-Robnik ``rho`` across intensive-energy windows.

    ``subsequences`` maps a label (e.g. ``(k, S)``) to that sequence's
    intensive levels.  Each sequence is unfolded on its own and the spacings
    are pooled per window.
    """
    all_levels = np.concatenate([np.asarray(v, float) for v in subsequences.values()])
    top = spec.eps_max if spec.eps_max is not None else all_levels.max()
    step = spec.width * (1.0 - spec.overlap)
    if step <= 0:
        raise ValueError("overlap must be below 1")
    points, skipped = [], []
    n_windows = int(np.floor((top - spec.eps_min - spec.width) / step + 1e-9)) + 1
    for i in range(max(n_windows, 0)):
        lo = spec.eps_min + i * step
        hi = lo + spec.width
        centre = 0.5 * (lo + hi)
        parts, reasons = [], []
        for label in sorted(subsequences, key=str):
            try:
                parts.append(window_spacings(subsequences[label], lo, hi, spec, label))
            except UnfoldingError as exc:
                reasons.append(f"{label}: {exc}")
        pooled = SpacingSet.pooled(parts)
        if len(pooled.spacings) < spec.min_spacings:
            skipped.append((centre, "; ".join(reasons) or f"{len(pooled.spacings)} spacings"))
        else:
            fit = fit_regularity(pooled)
            points.append(ScanPoint(centre, fit.rho, fit.residual, fit.n_spacings))
    return ScanResult(points, skipped)


def sector_subsequences(solution) -> dict:
    """Intensive levels of the reflection-resolved sectors ``k = 0`` and ``k = L/2``."""
    L, N = solution.params.n_sites, solution.params.n_particles
    out = {}
    for sys_ in solution.systems:
        if (2 * sys_.k_index) % L != 0:
            continue
        if sys_.reflection is None:
            raise ValueError(f"sector {sys_.k_index} lacks reflection labels")
        for s in (1, -1):
            out[(sys_.k_index, s)] = sys_.energies[sys_.reflection == s] / N
    return out


def write_scan(path, scan: ScanResult, fmt: str = "csv"):
    rows = [(p.eps_center, p.rho, p.residual, p.n_spacings) for p in scan.points]
    write_table(path, ["eps_center", "rho", "residual", "n_spacings"], rows, fmt)
