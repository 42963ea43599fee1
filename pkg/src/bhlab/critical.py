"""Stationary points of the classical energy on the constraint sphere.

Solves ``grad_x [H(x) + lam (|x|^2 - 2)] = 0`` together with the constraint by
multi-start Gauss-Newton.  The global U(1) phase is fixed by pinning
``p_g = 0`` (``q_g >= 0``) at a chosen gauge site ``g``; the remaining
degeneracies (dihedral images, time reversal) are removed when deduplicating.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .classical import RADIUS2, PhasePoint, classical_energy, energy_gradient, random_sphere_points
from .errors import NumericalError
from .fock import ModelParams


def energy_hessian(x, params: ModelParams) -> np.ndarray:
    """Hessian of H in the ``(q, p)`` ordering; vectorized over leading axes."""
    x = np.asarray(x, float)
    n = x.shape[-1] // 2
    q, p = x[..., :n], x[..., n:]
    r2 = q * q + p * p
    H = np.zeros(x.shape[:-1] + (2 * n, 2 * n))
    idx = np.arange(n)
    for blk in (0, n):
        H[..., blk + idx, blk + (idx + 1) % n] -= params.J
        H[..., blk + (idx + 1) % n, blk + idx] -= params.J
    U = params.U
    H[..., idx, idx] += U * (r2 + 2 * q * q)
    H[..., n + idx, n + idx] += U * (r2 + 2 * p * p)
    H[..., idx, n + idx] += 2 * U * q * p
    H[..., n + idx, idx] += 2 * U * q * p
    return H


def lagrange_residual(x, lam, params: ModelParams) -> np.ndarray:
    """``(grad H + 2 lam x, |x|^2 - 2)``."""
    x = np.asarray(x, float)
    g = energy_gradient(x, params) + 2 * np.asarray(lam)[..., None] * x
    c = np.sum(x * x, axis=-1) - RADIUS2
    return np.concatenate([g, c[..., None]], axis=-1)


def _jacobian(x, lam, params):
    n2 = x.shape[-1]
    H = energy_hessian(x, params) + 2 * lam[..., None, None] * np.eye(n2)
    Jm = np.zeros(x.shape[:-1] + (n2 + 1, n2 + 1))
    Jm[..., :n2, :n2] = H
    Jm[..., :n2, n2] = 2 * x
    Jm[..., n2, :n2] = 2 * x
    return Jm


def reduced_tangent_basis(x) -> np.ndarray:
    """Orthonormal basis of the complement of ``{x, Jx}`` (constraint normal and gauge direction)."""
    x = np.asarray(x, float)
    n = len(x) // 2
    gauge = np.concatenate([-x[n:], x[:n]])
    A = np.column_stack([x, gauge])
    Q, _ = np.linalg.qr(A, mode="complete")
    return Q[:, 2:]


def hessian_index(x, lam, params: ModelParams, tol: float = 1e-8) -> tuple[int, int]:
    """Negative and near-zero eigenvalue counts of the Lagrangian Hessian on the reduced space."""
    B = reduced_tangent_basis(x)
    HL = energy_hessian(x, params) + 2 * lam * np.eye(len(x))
    w = np.linalg.eigvalsh(B.T @ HL @ B)
    scale = max(1.0, np.max(np.abs(w)))
    return int(np.sum(w < -tol * scale)), int(np.sum(np.abs(w) <= tol * scale))


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    point: PhasePoint
    lam: float
    eps: float
    hessian_index: int
    gradient_residual: float
    n_zero_modes: int = 0
    multiplicity: int = 1  # inequivalent solutions found at this energy

    def to_record(self) -> dict:
        return {
            "eps_c": self.eps,
            "lambda": self.lam,
            "hessian_index": self.hessian_index,
            "q": self.point.q.tolist(),
            "p": self.point.p.tolist(),
            "gradient_residual": self.gradient_residual,
            "n_zero_modes": self.n_zero_modes,
        }


@dataclass(frozen=True)
class CriticalSearch:
    points: list = field(repr=False)
    n_starts: int
    n_converged: int
    n_failed: int

    @property
    def energies(self) -> np.ndarray:
        return np.array([c.eps for c in self.points])


def _gauge_fix(x, g):
    n = x.shape[-1] // 2
    z = x[..., :n] + 1j * x[..., n:]
    phase = np.exp(-1j * np.angle(z[..., g]))
    z = z * phase[..., None]
    return np.concatenate([z.real, z.imag], axis=-1)


def _newton(x, lam, params, g, max_iter=200, tol=1e-13):
    """Batched damped Gauss-Newton with ``p_g`` held at zero."""
    n2 = x.shape[-1]
    free = np.array([i for i in range(n2 + 1) if i != n2 // 2 + g])
    for _ in range(max_iter):
        F = lagrange_residual(x, lam, params)
        r = np.linalg.norm(F, axis=-1)
        active = r > tol
        if not np.any(active):
            break
        Jm = _jacobian(x[active], lam[active], params)[..., free]
        step_free = -np.einsum("bij,bj->bi", np.linalg.pinv(Jm, rcond=1e-12), F[active])
        step = np.zeros((step_free.shape[0], n2 + 1))
        step[:, free] = step_free
        xa, la, ra = x[active], lam[active], r[active]
        scale = np.ones(len(xa))
        accepted = np.zeros(len(xa), dtype=bool)
        for _ in range(30):
            todo = ~accepted
            xt = xa[todo] + scale[todo, None] * step[todo, :n2]
            lt = la[todo] + scale[todo] * step[todo, n2]
            rt = np.linalg.norm(lagrange_residual(xt, lt, params), axis=-1)
            ok = rt < ra[todo] * (1 - 1e-4 * scale[todo]) + 1e-15
            ids = np.nonzero(todo)[0]
            xa[ids[ok]] = xt[ok]
            la[ids[ok]] = lt[ok]
            accepted[ids[ok]] = True
            scale[ids[~ok]] *= 0.5
            if accepted.all():
                break
        x[active] = xa
        lam[active] = la
        stalled = np.nonzero(active)[0][~accepted]
        if len(stalled) and len(stalled) == active.sum():
            break
    return x, lam, np.linalg.norm(lagrange_residual(x, lam, params), axis=-1)


def _dihedral_images(z):
    L = len(z)
    out = []
    for s in range(L):
        r = np.roll(z, s)
        for img in (r, r[::-1]):
            out.append(img)
            out.append(img.conj())
    return out


def equivalent(x1, x2, tol: float = 1e-7) -> bool:
    """True if the points agree up to dihedral symmetry, time reversal and global phase."""
    n = len(x1) // 2
    z1 = x1[:n] + 1j * x1[n:]
    z2 = x2[:n] + 1j * x2[n:]
    base = np.vdot(z1, z1).real + np.vdot(z2, z2).real
    return any(base - 2 * abs(np.vdot(img, z2)) <= tol for img in _dihedral_images(z1))


def find_critical_points(params: ModelParams, n_starts: int = 10_000, rng_seed: int = 0,
                         gauge_site: int = 0, energy_tol: float = 1e-6,
                         residual_tol: float = 1e-10, starts=None) -> list[CriticalPoint]:
    return search_critical_points(params, n_starts, rng_seed, gauge_site, energy_tol,
                                  residual_tol, starts).points


def search_critical_points(params: ModelParams, n_starts: int = 10_000, rng_seed: int = 0,
                           gauge_site: int = 0, energy_tol: float = 1e-6,
                           residual_tol: float = 1e-10, starts=None) -> CriticalSearch:
    """Multi-start search; diverging starts are counted, not raised."""
    rng = np.random.default_rng(rng_seed)
    x = random_sphere_points(rng, n_starts, params.n_sites) if starts is None else np.array(starts, float)
    x = _gauge_fix(np.atleast_2d(x), gauge_site)
    lam = -np.sum(energy_gradient(x, params) * x, axis=-1) / (2 * RADIUS2)
    x, lam, res = _newton(x, lam, params, gauge_site)
    good = res <= residual_tol
    n = params.n_sites
    # q_g >= 0 leaves p_g = 0 untouched
    flip = x[:, gauge_site] < 0
    x[flip] *= -1
    eps = classical_energy(x, params)
    order = np.argsort(eps[good])
    xs, ls, es, rs = x[good][order], lam[good][order], eps[good][order], res[good][order]

    found: list[CriticalPoint] = []
    groups: list[list[int]] = []
    for i in range(len(es)):
        if groups and abs(es[i] - es[groups[-1][0]]) <= energy_tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    for grp in groups:
        reps: list[int] = []
        for i in grp:
            if not any(equivalent(xs[i], xs[j]) for j in reps):
                reps.append(i)
        info = {i: hessian_index(xs[i], ls[i], params) for i in reps}
        if any(z > 0 for _, z in info.values()):
            # continuous family: one representative per Hessian index
            by_index = {}
            for i in reps:
                by_index.setdefault(info[i][0], i)
            reps = sorted(by_index.values())
        for i in reps:
            idx, zeros = info[i]
            found.append(CriticalPoint(
                point=PhasePoint(xs[i, :n], xs[i, n:]),
                lam=float(ls[i]),
                eps=float(es[i]),
                hessian_index=idx,
                gradient_residual=float(rs[i]),
                n_zero_modes=zeros,
                multiplicity=len(reps),
            ))
    if not found:
        raise NumericalError(f"no critical point converged from {n_starts} starts")
    return CriticalSearch(found, n_starts, int(good.sum()), int((~good).sum()))


def distinct_energies(points, tol: float = 1e-6) -> np.ndarray:
    e = np.sort([c.eps for c in points])
    keep = [e[0]] if len(e) else []
    for v in e[1:]:
        if v - keep[-1] > tol:
            keep.append(v)
    return np.array(keep)


def write_critical_points(path, points):
    """One JSON object per line."""
    with open(path, "w") as fh:
        for c in points:
            fh.write(json.dumps(c.to_record()) + "\n")
