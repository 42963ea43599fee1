import numpy as np
import pytest
import scipy.sparse as sp

from bhlab.fock import ModelParams, solve_model

# initial conditions of the three quench regimes (projected onto the sphere by callers)
QUENCH_POINTS = {
    "trapped": ((0.086, -0.171, -0.9, 0.151), (-0.38, 0.392, 0.911, -0.048)),  # eps ~ -7.05
    "intermittent": ((0.211, 0.393, -0.221, 0.224), (-0.623, -0.022, 0.045, -1.145)),  # eps ~ -5.85
    "chaotic": ((0.306, -0.948, 0.289, -0.01), (-0.58, 0.652, -0.373, 0.151)),  # eps ~ -3.65
}


def tensor_bose_hubbard(N, L=4, J=1.0, U=-10.0):
    """Ring Hamiltonian from Kronecker products of truncated ladder operators.

    Returns the matrix restricted to total particle number ``N`` together
    with the occupation vectors of the kept product states.
    """
    d = N + 1
    a = sp.diags(np.sqrt(np.arange(1, d)), 1, format="csr")
    eye = sp.identity(d, format="csr")

    def site_op(op, i):
        out = sp.identity(1, format="csr")
        for j in range(L):
            out = sp.kron(out, op if j == i else eye, format="csr")
        return out

    ann = [site_op(a, i) for i in range(L)]
    num = [A.T @ A for A in ann]
    H = sp.csr_matrix((d ** L, d ** L))
    for i in range(L):
        hop = ann[(i + 1) % L].T @ ann[i]
        H = H - J * (hop + hop.T) + (U / N) * (num[i] @ num[i] - num[i])
    occ = np.array(np.unravel_index(np.arange(d ** L), (d,) * L)).T
    keep = occ.sum(axis=1) == N
    return H[keep][:, keep].toarray(), occ[keep]


@pytest.fixture(scope="session")
def sol6():
    return solve_model(ModelParams(6), reflection=True)


@pytest.fixture(scope="session")
def sol10():
    return solve_model(ModelParams(10), reflection=True)


@pytest.fixture(scope="session")
def sol20():
    return solve_model(ModelParams(20))
