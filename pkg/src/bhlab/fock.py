"""Fock basis, operators and momentum-sector reduction of the Bose-Hubbard ring.

Conventions
-----------
* Basis states are occupation vectors ``(n_1, ..., n_L)`` ordered
  lexicographically with the first site descending, so ``(N, 0, ..., 0)``
  comes first.
* The rotation ``R`` shifts occupations one site to the right,
  ``(n_1, ..., n_L) -> (n_L, n_1, ..., n_{L-1})``.
* Momentum states are built from the lexicographically smallest member ``a``
  of each rotation orbit.  With orbit period ``d`` the state is

      |k, a> = d**-0.5 * sum_{j<d} exp(-2 pi i k j / L) R^j |a>
             = (sqrt(d) / L) * sum_{j<L} exp(-2 pi i k j / L) R^j |a>

  and exists only when ``k * d % L == 0``.  It satisfies
  ``R |k, a> = exp(2 pi i k / L) |k, a>``.
* With these conventions the imbalance operator lowers the momentum label,
  ``I |k> in sector k - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .tables import write_table
from .errors import CapacityError, NumericalError

DEFAULT_MAX_DIM = 200_000


@dataclass(frozen=True)
class ModelParams:
    n_particles: int
    n_sites: int = 4
    J: float = 1.0
    U: float = -10.0

    def __post_init__(self):
        if int(self.n_sites) != self.n_sites or self.n_sites < 2:
            raise ValueError(f"n_sites must be an integer >= 2, got {self.n_sites}")
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ValueError(f"n_particles must be an integer >= 1, got {self.n_particles}")

    @property
    def dim(self) -> int:
        return comb(self.n_particles + self.n_sites - 1, self.n_sites - 1)


def _compositions(n_sites, total):
    if n_sites == 1:
        return np.array([[total]], dtype=np.int64)
    blocks = []
    for first in range(total, -1, -1):
        rest = _compositions(n_sites - 1, total - first)
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


@dataclass(frozen=True, eq=False)
class FockBasis:
    params: ModelParams
    states: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.states.setflags(write=False)
        base = self.params.n_particles + 1
        object.__setattr__(self, "_use_keys", self.params.n_sites * np.log2(base) < 62)
        if self._use_keys:
            weights = base ** np.arange(self.params.n_sites - 1, -1, -1, dtype=np.int64)
            object.__setattr__(self, "_weights", weights)
            # descending keys; negate so searchsorted sees an ascending array
            object.__setattr__(self, "_neg_keys", -(self.states @ weights))
        else:
            object.__setattr__(
                self, "_lookup", {tuple(s): i for i, s in enumerate(self.states.tolist())}
            )

    def __len__(self):
        return len(self.states)

    @property
    def dim(self) -> int:
        return len(self.states)

    def index_of(self, states) -> np.ndarray | int:
        """Position of one state or of each row of a 2-D array of states."""
        arr = np.asarray(states, dtype=np.int64)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        if arr.shape[1] != self.params.n_sites or np.any(arr.sum(axis=1) != self.params.n_particles):
            raise KeyError("state is not in this basis")
        if self._use_keys:
            neg = -(arr @ self._weights)
            idx = np.searchsorted(self._neg_keys, neg)
            idx = np.minimum(idx, len(self) - 1)
            if np.any(self._neg_keys[idx] != neg):
                raise KeyError("state is not in this basis")
        else:
            idx = np.array([self._lookup[tuple(s)] for s in arr.tolist()])
        return int(idx[0]) if single else idx


def enumerate_basis(params: ModelParams, max_dim: int = DEFAULT_MAX_DIM) -> FockBasis:
    if params.dim > max_dim:
        raise CapacityError(
            f"Fock dimension {params.dim} for N={params.n_particles}, L={params.n_sites} "
            f"exceeds max_dim={max_dim}"
        )
    return FockBasis(params, _compositions(params.n_sites, params.n_particles))


# --- dihedral actions -------------------------------------------------------


def apply_rotation(state):
    """``(n_1, ..., n_L) -> (n_L, n_1, ..., n_{L-1})``; works row-wise on 2-D input."""
    return np.roll(np.asarray(state), 1, axis=-1)


def apply_reflection(state):
    return np.asarray(state)[..., ::-1]


def _permutation_matrix(basis, images):
    cols = np.arange(basis.dim)
    rows = basis.index_of(images)
    return sp.csr_matrix((np.ones(basis.dim), (rows, cols)), shape=(basis.dim, basis.dim))


def rotation_matrix(basis: FockBasis) -> sp.csr_matrix:
    return _permutation_matrix(basis, apply_rotation(basis.states))


def reflection_matrix(basis: FockBasis) -> sp.csr_matrix:
    return _permutation_matrix(basis, apply_reflection(basis.states))


# --- operators ---------------------------------------------------------------


def build_hamiltonian(params: ModelParams, basis: FockBasis) -> sp.csr_matrix:
    """Sparse real-symmetric Hamiltonian with periodic hopping.

    ``H = sum_i [-J (a+_{i+1} a_i + h.c.) + (U/N) n_i (n_i - 1)]``
    """
    s = basis.states
    L, N = params.n_sites, params.n_particles
    diag = (params.U / N) * np.sum(s * (s - 1), axis=1).astype(float)
    rows, cols, vals = [np.arange(basis.dim)], [np.arange(basis.dim)], [diag]
    for i in range(L):
        j = (i + 1) % L
        src = np.nonzero(s[:, i] > 0)[0]
        tgt_states = s[src].copy()
        amp = np.sqrt(tgt_states[:, i] * (tgt_states[:, j] + 1.0))
        tgt_states[:, i] -= 1
        tgt_states[:, j] += 1
        tgt = basis.index_of(tgt_states)
        # a+_j a_i and its conjugate
        rows += [tgt, src]
        cols += [src, tgt]
        vals += [-params.J * amp, -params.J * amp]
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.dim, basis.dim),
    )
    return H.tocsr()


def build_number_operator(site: int, basis: FockBasis) -> sp.dia_matrix:
    """Diagonal ``n_site``; ``site`` is 1-based."""
    if not 1 <= site <= basis.params.n_sites:
        raise IndexError(f"site {site} outside 1..{basis.params.n_sites}")
    return sp.diags(basis.states[:, site - 1].astype(float))


def imbalance_diagonal(basis: FockBasis) -> np.ndarray:
    L, N = basis.params.n_sites, basis.params.n_particles
    phases = np.exp(2j * np.pi * np.arange(L) / L)
    return basis.states @ phases / N


def build_imbalance_operator(params: ModelParams, basis: FockBasis) -> sp.dia_matrix:
    """Intensive generalized imbalance ``sum_k n_k exp(2 pi i (k-1)/L) / N`` (not Hermitian)."""
    return sp.diags(imbalance_diagonal(basis))


# --- momentum sectors ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MomentumSectorBasis:
    """Orbit representatives of one momentum sector.

    ``projector`` has shape ``(dim_full, dim)``; its columns are the
    normalized momentum states written in the Fock basis, so an operator block
    is ``P_out^H @ O @ P_in``.
    """

    k_index: int
    n_sites: int
    representatives: np.ndarray  # indices into the Fock basis
    periods: np.ndarray
    projector: sp.csr_matrix = field(repr=False)
    normalization: str = "|k,a> = d^(-1/2) sum_{j<d} exp(-2 pi i k j/L) R^j |a>"

    @property
    def dim(self) -> int:
        return len(self.representatives)

    @property
    def phase(self) -> float:
        return 2 * np.pi * self.k_index / self.n_sites


@dataclass(frozen=True, eq=False)
class OrbitData:
    rep_of: np.ndarray  # representative (Fock index) of every state
    shift_of: np.ndarray  # j with state = R^j rep
    period_of: np.ndarray


def orbit_data(basis: FockBasis) -> OrbitData:
    L = basis.params.n_sites
    images = [basis.states]
    for _ in range(L - 1):
        images.append(apply_rotation(images[-1]))
    idx = np.column_stack([basis.index_of(im) for im in images])  # idx[:, j] = index of R^j s
    # lexicographically smallest tuple = largest index in descending ordering
    jmax = np.argmax(idx, axis=1)
    rep = idx[np.arange(basis.dim), jmax]
    shift = (-jmax) % L
    period = np.full(basis.dim, L)
    for j in range(L - 1, 0, -1):
        period[idx[:, j] == idx[:, 0]] = j
    return OrbitData(rep, shift, period)


def build_sector_basis(params: ModelParams, k_index: int, basis: FockBasis | None = None,
                       orbits: OrbitData | None = None) -> MomentumSectorBasis:
    L = params.n_sites
    if not 0 <= k_index < L:
        raise IndexError(f"k_index {k_index} outside 0..{L - 1}")
    basis = basis if basis is not None else enumerate_basis(params)
    orbits = orbits if orbits is not None else orbit_data(basis)
    reps = np.unique(orbits.rep_of)
    periods = orbits.period_of[reps]
    allowed = (k_index * periods) % L == 0
    reps, periods = reps[allowed], periods[allowed]
    col_of = np.full(basis.dim, -1)
    col_of[reps] = np.arange(len(reps))
    cols = col_of[orbits.rep_of]
    rows = np.nonzero(cols >= 0)[0]
    cols = cols[rows]
    roots = np.exp(-2j * np.pi * np.arange(L) / L)
    # exact zeros keep the k = 0 and k = L/2 blocks real
    roots = np.where(np.abs(roots.real) < 1e-15, 0, roots.real) + 1j * np.where(
        np.abs(roots.imag) < 1e-15, 0, roots.imag)
    vals = roots[(k_index * orbits.shift_of[rows]) % L] / np.sqrt(orbits.period_of[rows])
    P = sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, len(reps)))
    return MomentumSectorBasis(k_index, L, reps, periods, P)


def build_all_sectors(params: ModelParams, basis: FockBasis) -> list[MomentumSectorBasis]:
    orbits = orbit_data(basis)
    return [build_sector_basis(params, k, basis, orbits) for k in range(params.n_sites)]


def commutes_with_rotation(op, basis: FockBasis, tol: float = 1e-12) -> bool:
    R = rotation_matrix(basis)
    op = sp.csr_matrix(op)
    diff = (R.T @ op @ R - op).tocsr()
    scale = max(abs(op).max(), 1.0)
    return diff.nnz == 0 or abs(diff).max() <= tol * scale


def project_to_sector(op, sector: MomentumSectorBasis, sector_out: MomentumSectorBasis | None = None,
                      basis: FockBasis | None = None, dense: bool = True):
    """Block ``<sector_out| op |sector>`` of a Fock-space operator.

    Without ``sector_out`` the operator is declared rotation symmetric; pass
    ``basis`` to have that checked.  For the imbalance the nonvanishing
    transfer block is ``sector_out.k_index == sector.k_index - 1``.
    """
    if sector_out is None:
        if basis is not None and not commutes_with_rotation(op, basis):
            raise ValueError("operator does not commute with the rotation")
        sector_out = sector
    block = sector_out.projector.conj().T @ sp.csr_matrix(op) @ sector.projector
    if not dense:
        return block
    block = block.toarray()
    if sector_out is sector and not np.iscomplexobj(op) and np.all(block.imag == 0):
        block = block.real.copy()
    return block


# --- eigensolver -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SectorEigensystem:
    k_index: int
    energies: np.ndarray
    vectors: np.ndarray = field(repr=False)  # columns in the sector basis
    reflection: np.ndarray | None = None  # +-1 labels for reflection-invariant sectors

    @property
    def dim(self) -> int:
        return len(self.energies)


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-modulus component of every column real and positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    pivots = vectors[idx, np.arange(vectors.shape[1])]
    return vectors * (np.abs(pivots) / pivots)[None, :]


def diagonalize_sector(block: np.ndarray, k_index: int = -1) -> SectorEigensystem:
    try:
        energies, vectors = scipy.linalg.eigh(block)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigensolver failed in sector k={k_index}: {exc}") from exc
    return SectorEigensystem(k_index, energies, fix_phases(vectors))


def reflection_labels(system: SectorEigensystem, sector: MomentumSectorBasis,
                      basis: FockBasis, tol: float = 1e-6) -> SectorEigensystem:
    """Attach reflection eigenvalues to a sector mapped onto itself by ``S``.

    Within numerically degenerate clusters the eigenvectors are rotated so
    that they also diagonalize ``S``.  Returns a new eigensystem.
    """
    L = sector.n_sites
    if (2 * sector.k_index) % L != 0:
        raise ValueError(f"reflection does not map sector k={sector.k_index} onto itself")
    S = project_to_sector(reflection_matrix(basis), sector)
    V = system.vectors.copy()
    E = system.energies
    scale = max(1.0, np.max(np.abs(E)))
    start = 0
    while start < len(E):
        stop = start + 1
        while stop < len(E) and E[stop] - E[stop - 1] <= 1e-9 * scale:
            stop += 1
        if stop - start > 1:
            sub = V[:, start:stop]
            w, u = np.linalg.eigh(sub.conj().T @ S @ sub)
            V[:, start:stop] = sub @ u
        start = stop
    V = fix_phases(V)
    s_exp = np.real(np.einsum("ij,ij->j", V.conj(), S @ V))
    labels = np.sign(s_exp)
    if np.any(np.abs(np.abs(s_exp) - 1) > tol):
        bad = int(np.sum(np.abs(np.abs(s_exp) - 1) > tol))
        raise NumericalError(f"{bad} eigenvectors in sector k={sector.k_index} are not reflection eigenstates")
    return SectorEigensystem(system.k_index, E, V, labels.astype(int))


def solve_sectors(params: ModelParams, basis: FockBasis | None = None,
                  sectors: list[MomentumSectorBasis] | None = None,
                  H: sp.spmatrix | None = None) -> list[SectorEigensystem]:
    """Diagonalize every momentum block of the Hamiltonian."""
    basis = basis if basis is not None else enumerate_basis(params)
    sectors = sectors if sectors is not None else build_all_sectors(params, basis)
    H = H if H is not None else build_hamiltonian(params, basis)
    return [diagonalize_sector(project_to_sector(H, s), s.k_index) for s in sectors]


@dataclass(frozen=True, eq=False)
class ModelSolution:
    """Everything the quantum-dynamics layer needs from one diagonalization."""

    params: ModelParams
    basis: FockBasis
    sectors: list
    systems: list
    H: sp.csr_matrix = field(repr=False)

    @property
    def energies(self) -> np.ndarray:
        return np.sort(np.concatenate([s.energies for s in self.systems]))


def solve_model(params: ModelParams, max_dim: int = DEFAULT_MAX_DIM,
                reflection: bool = False) -> ModelSolution:
    """Basis, sector bases and full sector eigensystems in one call.

    With ``reflection`` the reflection-invariant sectors carry ``+-1`` labels.
    """
    basis = enumerate_basis(params, max_dim)
    sectors = build_all_sectors(params, basis)
    H = build_hamiltonian(params, basis)
    systems = solve_sectors(params, basis, sectors, H)
    if reflection:
        L = params.n_sites
        systems = [reflection_labels(sys_, sec, basis) if (2 * sec.k_index) % L == 0 else sys_
                   for sys_, sec in zip(systems, sectors)]
    return ModelSolution(params, basis, sectors, systems, H)


# --- text dumps --------------------------------------------------------------


def write_basis(path, basis: FockBasis):
    with open(path, "w") as fh:
        for row in basis.states:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_basis(path, params: ModelParams) -> FockBasis:
    states = np.loadtxt(path, dtype=np.int64, ndmin=2)
    if states.shape[1] != params.n_sites:
        raise ValueError("basis file does not match n_sites")
    return FockBasis(params, states)


def write_eigenvalues(path, systems, n_particles: int, fmt: str = "csv"):
    """One row per level; ``reflection`` is 0 where no label applies."""
    rows = []
    for sys_ in systems:
        refl = sys_.reflection if sys_.reflection is not None else np.zeros(len(sys_.energies), int)
        rows.extend((sys_.k_index, n, E, E / n_particles, r)
                    for n, (E, r) in enumerate(zip(sys_.energies, refl)))
    write_table(path, ["sector_k", "index_n", "E", "eps", "reflection"], rows, fmt)
