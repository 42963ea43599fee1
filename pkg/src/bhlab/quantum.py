"""Quantum quench dynamics in the sector eigenbasis.

A Fock-space state ``psi`` has sector coefficients ``c_k = V_k^H P_k^H psi``;
its time evolution is ``psi(t) = sum_k P_k V_k (exp(-i E_k t) c_k)`` with
hbar = 1.  Observables that are diagonal in the Fock basis (occupations,
imbalance) are evaluated on ``|psi(t)|^2`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
import scipy.sparse as sp
from scipy.special import gammaln

from .classical import PhasePoint, classical_occupations
from .fock import (
    FockBasis,
    ModelParams,
    ModelSolution,
    build_imbalance_operator,
    imbalance_diagonal,
)
from .tables import write_table


# --- coherent states ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoherentState:
    amplitudes: np.ndarray = field(repr=False)
    source_point: PhasePoint
    norm_check: float


def build_coherent_state(x, params: ModelParams, basis: FockBasis) -> CoherentState:
    """Amplitudes proportional to ``prod_k z_k^{n_k} / sqrt(n_k!)`` with ``z = q + i p``.

    Magnitudes are accumulated as logarithms and exponentiated relative to
    their maximum, so large ``N`` neither overflows nor underflows.
    """
    point = x if isinstance(x, PhasePoint) else PhasePoint.from_vector(x)
    z = point.q + 1j * point.p
    n = basis.states
    absz = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        logz = np.log(absz)
        # 0 * log(0) contributes nothing; n > 0 on a vanishing site kills the state
        terms = np.where(n > 0, n * logz, 0.0)
    logmag = terms.sum(axis=1) - 0.5 * gammaln(n + 1.0).sum(axis=1)
    phase = (n * np.angle(z)).sum(axis=1)
    alive = np.isfinite(logmag)
    amp = np.zeros(basis.dim, complex)
    amp[alive] = np.exp(logmag[alive] - logmag[alive].max() + 1j * phase[alive])
    norm = np.linalg.norm(amp)
    amp /= norm
    return CoherentState(amp, point, float(np.linalg.norm(amp)))


def expectation(state: np.ndarray, operator) -> complex | float:
    """``<psi|O|psi>`` for a Fock diagonal (1-D array) or a (sparse) matrix."""
    if np.ndim(operator) == 1 and not sp.issparse(operator):
        val = np.dot(np.abs(state) ** 2, operator)
    else:
        val = np.vdot(state, operator @ state)
    return val.real if abs(np.imag(val)) <= 1e-14 * max(1.0, abs(val)) else val


# --- eigenbasis amplitudes -------------------------------------------------


@dataclass(frozen=True, eq=False)
class EigenbasisAmplitudes:
    """Energy-basis coefficients ``c[k][n]`` with matching ``energies[k][n]``."""

    c: list
    energies: list
    solution: ModelSolution = field(repr=False)

    @property
    def weights(self) -> np.ndarray:
        return np.concatenate([np.abs(ck) ** 2 for ck in self.c])

    @property
    def flat_energies(self) -> np.ndarray:
        return np.concatenate(self.energies)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def sector_weights(self) -> np.ndarray:
        return np.array([np.sum(np.abs(ck) ** 2) for ck in self.c])


def decompose_in_eigenbasis(state, solution: ModelSolution) -> EigenbasisAmplitudes:
    psi = state.amplitudes if isinstance(state, CoherentState) else np.asarray(state)
    L = solution.params.n_sites
    ks = sorted(s.k_index for s in solution.systems)
    if ks != list(range(L)):
        raise ValueError(f"eigensystems cover sectors {ks}, need all of 0..{L - 1}")
    c, E = [], []
    for sec, sys_ in zip(solution.sectors, solution.systems):
        coeff = sec.projector.conj().T @ psi
        c.append(sys_.vectors.conj().T @ coeff)
        E.append(sys_.energies)
    return EigenbasisAmplitudes(c, E, solution)


# --- LDOS ------------------------------------------------------------------


@dataclass(frozen=True)
class LdosHistogram:
    bin_edges: np.ndarray
    weights: np.ndarray
    mean_eps: float
    var_eps: float


def weighted_histogram(eps, w, bins=100) -> LdosHistogram:
    """Histogram with exact (unbinned) first and second moments."""
    eps = np.asarray(eps, float)
    w = np.asarray(w, float)
    w = w / w.sum()
    if np.isscalar(bins):
        lo, hi = eps.min(), eps.max()
        if hi - lo < 1e-12:
            # degenerate input: one bin around the common value
            bins = np.array([lo - 0.5e-3, hi + 0.5e-3])
        else:
            bins = np.linspace(lo, hi, int(bins) + 1)
    h, edges = np.histogram(eps, bins=bins, weights=w)
    mean = float(np.dot(w, eps))
    var = float(np.dot(w, (eps - mean) ** 2))
    return LdosHistogram(edges, h, mean, var)


def ldos(amplitudes: EigenbasisAmplitudes, bins=100, weight_floor: float = 0.0) -> LdosHistogram:
    """``|c|^2`` against ``E/N``; weights below ``weight_floor`` are dropped from the binning range."""
    eps = amplitudes.flat_energies / amplitudes.solution.params.n_particles
    w = amplitudes.weights
    if np.isscalar(bins) and weight_floor > 0:
        keep = w > weight_floor
        bins = np.linspace(eps[keep].min(), eps[keep].max(), int(bins) + 1)
    return weighted_histogram(eps, w, bins)


def write_histogram(path, hist: LdosHistogram, fmt: str = "csv"):
    rows = zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.weights)
    write_table(path, ["bin_left", "bin_right", "weight"], rows, fmt)


# --- time evolution ----------------------------------------------------------


def evolve_state(amplitudes: EigenbasisAmplitudes, times) -> np.ndarray:
    """Fock-basis states, one column per time."""
    times = np.atleast_1d(np.asarray(times, float))
    sol = amplitudes.solution
    psi = np.zeros((sol.basis.dim, len(times)), complex)
    for sec, sys_, ck, Ek in zip(sol.sectors, sol.systems, amplitudes.c, amplitudes.energies):
        phases = np.exp(-1j * np.outer(Ek, times)) * ck[:, None]
        psi += sec.projector @ (sys_.vectors @ phases)
    return psi


def evolve_expectation(amplitudes: EigenbasisAmplitudes, operator, times,
                       chunk: int = 256) -> np.ndarray:
    """``<psi(t)|O|psi(t)>`` on the given times.

    ``operator`` is a Fock diagonal (1-D array), a stack of diagonals
    (2-D array, one row per observable) or a sparse matrix.  Real output
    when every value is real.
    """
    times = np.atleast_1d(np.asarray(times, float))
    op = operator
    diagonal = isinstance(op, np.ndarray) and op.ndim in (1, 2)
    out = []
    for start in range(0, len(times), chunk):
        psi = evolve_state(amplitudes, times[start:start + chunk])
        if diagonal:
            out.append(op @ (np.abs(psi) ** 2))
        else:
            out.append(np.einsum("it,it->t", psi.conj(), op @ psi))
    res = np.concatenate(out, axis=-1)
    if np.iscomplexobj(res) and np.all(np.abs(res.imag) <= 1e-12 * np.maximum(1.0, np.abs(res))):
        res = res.real
    return res


@dataclass(frozen=True)
class ObservableSeries:
    times: np.ndarray
    occupations: np.ndarray  # (n_sites, T), normalized by N
    n_max: np.ndarray
    imbalance: np.ndarray  # complex
    n_max_site: int

    def time_average(self, t_lo: float, t_hi: float, values=None) -> float:
        v = self.n_max if values is None else values
        m = (self.times >= t_lo) & (self.times <= t_hi)
        if m.sum() < 2:
            raise ValueError("time window holds fewer than two samples")
        return float(trapezoid(v[m], self.times[m]) / (self.times[m][-1] - self.times[m][0]))


def max_occupation_site(point: PhasePoint) -> int:
    """0-based site with the largest classical occupation."""
    return int(np.argmax(classical_occupations(point.vector)))


def occupation_series(amplitudes: EigenbasisAmplitudes, times, n_max_site: int) -> ObservableSeries:
    sol = amplitudes.solution
    N = sol.params.n_particles
    diags = np.vstack([sol.basis.states.T / N, imbalance_diagonal(sol.basis).real,
                       imbalance_diagonal(sol.basis).imag])
    vals = evolve_expectation(amplitudes, diags, times)
    L = sol.params.n_sites
    occ = vals[:L]
    return ObservableSeries(np.asarray(times, float), occ, occ[n_max_site],
                            vals[L] + 1j * vals[L + 1], n_max_site)


def write_series(path, series: ObservableSeries, fmt: str = "csv"):
    L = series.occupations.shape[0]
    cols = ["t"] + [f"n{k + 1}" for k in range(L)] + ["n_max", "ReI", "ImI"]
    table = np.column_stack([series.times, series.occupations.T, series.n_max,
                             series.imbalance.real, series.imbalance.imag])
    write_table(path, cols, table, fmt)


# --- diagonal ensemble -------------------------------------------------------


def _transfer(solution: ModelSolution, operator, k_out: int, k_in: int):
    """``P_out^H O P_in`` in the sector bases (sparse)."""
    P_out = solution.sectors[k_out].projector
    P_in = solution.sectors[k_in].projector
    O = sp.diags(operator) if isinstance(operator, np.ndarray) and operator.ndim == 1 else sp.csr_matrix(operator)
    return (P_out.conj().T @ O @ P_in).tocsr()


def diagonal_ensemble(amplitudes: EigenbasisAmplitudes, operator, degeneracy_tol: float | None = None):
    """Infinite-time average of ``<O>``.

    Pairs of eigenstates with ``|E_a - E_b| <= degeneracy_tol`` keep their
    cross terms; every other off-diagonal term dephases.  The default
    tolerance is ``1e-10 * N``; ``0`` gives the plain diagonal sum.
    """
    sol = amplitudes.solution
    if degeneracy_tol is None:
        degeneracy_tol = 1e-10 * sol.params.n_particles
    L = sol.params.n_sites
    systems = sol.systems
    diag_blocks = {k: _transfer(sol, operator, k, k) for k in range(L)}
    total = 0.0 + 0.0j
    for k in range(L):
        V = systems[k].vectors
        d = np.einsum("ij,ij->j", V.conj(), diag_blocks[k] @ V)
        total += np.dot(np.abs(amplitudes.c[k]) ** 2, d)
    if degeneracy_tol > 0:
        k_of = np.concatenate([np.full(len(e), k) for k, e in enumerate(amplitudes.energies)])
        n_of = np.concatenate([np.arange(len(e)) for e in amplitudes.energies])
        E = amplitudes.flat_energies
        order = np.argsort(E, kind="stable")
        Es = E[order]
        blocks = {}
        # each near-degenerate pair (a < b in sorted order) enters twice
        for i in range(len(Es)):
            j = i + 1
            while j < len(Es) and Es[j] - Es[i] <= degeneracy_tol:
                a, b = order[i], order[j]
                ka, na, kb, nb = k_of[a], n_of[a], k_of[b], n_of[b]
                if (ka, kb) not in blocks:
                    blocks[(ka, kb)] = _transfer(sol, operator, ka, kb)
                    blocks[(kb, ka)] = _transfer(sol, operator, kb, ka)
                va, vb = systems[ka].vectors[:, na], systems[kb].vectors[:, nb]
                o_ab = np.vdot(va, blocks[(ka, kb)] @ vb)
                o_ba = np.vdot(vb, blocks[(kb, ka)] @ va)
                ca, cb = amplitudes.c[ka][na], amplitudes.c[kb][nb]
                total += np.conj(ca) * cb * o_ab + np.conj(cb) * ca * o_ba
                j += 1
    if abs(total.imag) <= 1e-12 * max(1.0, abs(total)):
        return float(total.real)
    return complex(total)


# --- quadruplets -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadrupletBlock:
    n_index: int
    energies: np.ndarray  # one per sector, k = 0..L-1
    block: np.ndarray  # <E_{n,k'}| I |E_{n,k}> at [k', k]
    eigenvalues: np.ndarray
    max_gap: float  # extensive
    n_particles: int

    @property
    def eps_mean(self) -> float:
        return float(np.mean(self.energies)) / self.n_particles


@dataclass(frozen=True)
class QuadrupletSet:
    blocks: list
    leftovers: dict  # sector k -> number of unpaired levels at the top


def quadruplet_eigenvalues(block) -> np.ndarray:
    return np.linalg.eigvals(np.asarray(block))


def imbalance_transfer_blocks(solution: ModelSolution) -> dict:
    """Sparse ``P_{k'}^H I P_k`` for every sector pair."""
    I = build_imbalance_operator(solution.params, solution.basis)
    L = solution.params.n_sites
    return {(a, b): _transfer(solution, I, a, b) for a in range(L) for b in range(L)}


def build_quadruplet_blocks(solution: ModelSolution, transfer=None, n_levels: int | None = None) -> QuadrupletSet:
    """Pair the n-th level of each sector and assemble the reduced imbalance.

    Every sector pair is evaluated, so the vanishing of the diagonal and of
    the off-band entries is a checked result rather than an assumption.
    """
    L = solution.params.n_sites
    N = solution.params.n_particles
    transfer = imbalance_transfer_blocks(solution) if transfer is None else transfer
    systems = sorted(solution.systems, key=lambda s: s.k_index)
    lengths = [len(s.energies) for s in systems]
    n_min = min(lengths) if n_levels is None else min(n_levels, min(lengths))
    V = [s.vectors[:, :n_min] for s in systems]
    M = np.zeros((n_min, L, L), complex)
    for (a, b), T in transfer.items():
        if T.nnz == 0:
            continue
        M[:, a, b] = np.einsum("ij,ij->j", V[a].conj(), T @ V[b])
    E = np.column_stack([s.energies[:n_min] for s in systems]) / N
    eig = np.linalg.eigvals(M) if n_min else np.zeros((0, L), complex)
    blocks = [QuadrupletBlock(n, E[n] * N, M[n], eig[n], float(np.ptp(E[n] * N)), N)
              for n in range(n_min)]
    leftovers = {s.k_index: ln - n_min for s, ln in zip(systems, lengths) if ln > n_min}
    return QuadrupletSet(blocks, leftovers)


def nonzero_fraction(blocks, threshold: float = 1e-3, eps_window=None) -> float:
    """Share of block eigenvalues with ``|i|^2 > threshold``, optionally for blocks with mean ``E/N`` in ``eps_window``."""
    sel = list(blocks)
    if eps_window is not None:
        lo, hi = eps_window
        sel = [b for b in sel if lo <= b.eps_mean <= hi]
    if not sel:
        return float("nan")
    vals = np.concatenate([np.abs(b.eigenvalues) ** 2 for b in sel])
    return float(np.mean(vals > threshold))


def write_quadruplets(path, blocks, fmt: str = "csv"):
    """Gap column is intensive (``max_gap / N``)."""
    L = len(blocks[0].eigenvalues) if blocks else 4
    cols = (["n_index", "eps_mean", "gap"] + [f"Re_i{r + 1}" for r in range(L)]
            + [f"Im_i{r + 1}" for r in range(L)])
    rows = []
    for b in blocks:
        ev = np.sort_complex(b.eigenvalues)
        rows.append([b.n_index, b.eps_mean, b.max_gap / b.n_particles, *ev.real, *ev.imag])
    write_table(path, cols, rows, fmt)
