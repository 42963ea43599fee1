import io
from math import comb

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from bhlab.errors import CapacityError
from bhlab.fock import (
    FockBasis,
    ModelParams,
    apply_reflection,
    apply_rotation,
    build_all_sectors,
    build_hamiltonian,
    build_imbalance_operator,
    build_number_operator,
    build_sector_basis,
    commutes_with_rotation,
    diagonalize_sector,
    enumerate_basis,
    imbalance_diagonal,
    project_to_sector,
    read_basis,
    reflection_matrix,
    rotation_matrix,
    solve_model,
    write_basis,
    write_eigenvalues,
)

from conftest import tensor_bose_hubbard


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(0)
    with pytest.raises(ValueError):
        ModelParams(3, n_sites=1)
    assert ModelParams(55).dim == 30856


@pytest.mark.parametrize("N,L", [(1, 4), (3, 2), (10, 4), (55, 4), (6, 5)])
def test_basis_size_stars_and_bars(N, L):
    assert ModelParams(N, L).dim == comb(N + L - 1, L - 1)
    if N <= 10:
        assert enumerate_basis(ModelParams(N, L)).dim == comb(N + L - 1, L - 1)


def test_basis_order_two_sites():
    b = enumerate_basis(ModelParams(3, 2))
    assert_array_equal(b.states, [[3, 0], [2, 1], [1, 2], [0, 3]])


def test_basis_inverse_map():
    b = enumerate_basis(ModelParams(7))
    assert_array_equal(b.index_of(b.states), np.arange(b.dim))
    assert b.index_of([7, 0, 0, 0]) == 0
    with pytest.raises(KeyError):
        b.index_of([6, 0, 0, 0])


def test_capacity_error():
    with pytest.raises(CapacityError):
        enumerate_basis(ModelParams(55), max_dim=1000)


def test_hamiltonian_matches_tensor_oracle():
    for N in (1, 2, 3, 4):
        params = ModelParams(N)
        basis = enumerate_basis(params)
        H = build_hamiltonian(params, basis).toarray()
        Hd, occ = tensor_bose_hubbard(N)
        perm = basis.index_of(occ)
        ref = np.zeros_like(H)
        ref[np.ix_(perm, perm)] = Hd
        assert_allclose(H, ref, atol=1e-12)


def test_interaction_diagonal_element():
    params = ModelParams(2)
    basis = enumerate_basis(params)
    H = build_hamiltonian(params, basis)
    i = basis.index_of([2, 0, 0, 0])
    assert H[i, i] == pytest.approx(-10.0)


def test_single_particle_spectrum():
    params = ModelParams(1)
    H = build_hamiltonian(params, enumerate_basis(params)).toarray()
    assert_allclose(np.linalg.eigvalsh(H), [-2, 0, 0, 2], atol=1e-12)
    sol = solve_model(params)
    assert_allclose([s.energies[0] for s in sol.systems], [-2, 0, 2, 0], atol=1e-12)


@pytest.mark.parametrize("N", [1, 2, 3, 4, 5, 6])
def test_sector_union_equals_full_spectrum(N):
    params = ModelParams(N)
    sol = solve_model(params)
    full = np.linalg.eigvalsh(build_hamiltonian(params, sol.basis).toarray())
    assert_allclose(sol.energies, full, atol=1e-10)
    oracle = np.linalg.eigvalsh(tensor_bose_hubbard(N)[0])
    assert_allclose(sol.energies, oracle, atol=1e-10)


def test_hamiltonian_hermitian_and_symmetric():
    for N in range(1, 7):
        params = ModelParams(N)
        basis = enumerate_basis(params)
        H = build_hamiltonian(params, basis)
        assert abs(H - H.T.conj()).max() <= 1e-12 * abs(H).max()
        R = rotation_matrix(basis)
        S = reflection_matrix(basis)
        assert abs(R.T @ H @ R - H).max() == 0
        assert abs(S.T @ H @ S - H).max() == 0


def test_number_operators():
    params = ModelParams(3)
    basis = enumerate_basis(params)
    n1 = build_number_operator(1, basis)
    assert n1.diagonal()[basis.index_of([3, 0, 0, 0])] == 3
    total = sum(build_number_operator(k, basis) for k in range(1, 5))
    assert_allclose(total.diagonal(), 3.0)
    b2 = enumerate_basis(ModelParams(2))
    assert build_number_operator(1, b2).diagonal().sum() == build_number_operator(2, b2).diagonal().sum()
    with pytest.raises(IndexError):
        build_number_operator(5, basis)


def test_imbalance_values():
    params = ModelParams(4)
    basis = enumerate_basis(params)
    d = imbalance_diagonal(basis)
    assert d[basis.index_of([4, 0, 0, 0])] == pytest.approx(1.0)
    assert d[basis.index_of([0, 4, 0, 0])] == pytest.approx(1j)
    assert abs(d[basis.index_of([1, 1, 1, 1])]) < 1e-15
    assert np.all(np.abs(d) <= 1 + 1e-15)


@pytest.mark.parametrize("N", [2, 5, 6])
def test_imbalance_rotation_covariance(N):
    params = ModelParams(N)
    basis = enumerate_basis(params)
    I = build_imbalance_operator(params, basis)
    R = rotation_matrix(basis)
    assert_allclose((R.T @ I @ R).toarray(), np.exp(2j * np.pi / 4) * I.toarray(), atol=1e-14)


def test_rotation_and_reflection_actions():
    s = np.array([1, 2, 3, 4])
    assert_array_equal(apply_rotation(s), [4, 1, 2, 3])
    assert_array_equal(apply_reflection(s), [4, 3, 2, 1])
    x = s
    for _ in range(4):
        x = apply_rotation(x)
    assert_array_equal(x, s)
    assert_array_equal(apply_reflection(apply_reflection(s)), s)
    assert not np.array_equal(apply_rotation(apply_reflection(s)), apply_reflection(apply_rotation(s)))


def test_symmetry_actions_are_bijections():
    basis = enumerate_basis(ModelParams(5))
    for f in (apply_rotation, apply_reflection):
        idx = basis.index_of(f(basis.states))
        assert_array_equal(np.sort(idx), np.arange(basis.dim))


def test_sector_dims_and_periods():
    sectors = build_all_sectors(ModelParams(1), enumerate_basis(ModelParams(1)))
    assert [s.dim for s in sectors] == [1, 1, 1, 1]
    p4 = ModelParams(4)
    b4 = enumerate_basis(p4)
    i = b4.index_of([1, 1, 1, 1])
    in_sector = [i in build_sector_basis(p4, k, b4).representatives for k in range(4)]
    assert in_sector == [True, False, False, False]
    p10 = ModelParams(10)
    assert sum(s.dim for s in build_all_sectors(p10, enumerate_basis(p10))) == comb(13, 3)


@pytest.mark.parametrize("N", [3, 6, 8])
def test_sector_projectors_are_momentum_eigenstates(N):
    params = ModelParams(N)
    basis = enumerate_basis(params)
    R = rotation_matrix(basis)
    for sec in build_all_sectors(params, basis):
        P = sec.projector.toarray()
        assert_allclose(P.conj().T @ P, np.eye(sec.dim), atol=1e-12)
        assert_allclose(R @ P, np.exp(2j * np.pi * sec.k_index / 4) * P, atol=1e-12)


def test_real_blocks_and_transfer_selection_rule():
    params = ModelParams(6)
    basis = enumerate_basis(params)
    H = build_hamiltonian(params, basis)
    I = build_imbalance_operator(params, basis)
    sectors = build_all_sectors(params, basis)
    for sec in sectors:
        block = project_to_sector(H, sec, basis=basis)
        assert_allclose(block, block.conj().T, atol=1e-12)
        if sec.k_index in (0, 2):
            assert not np.iscomplexobj(block)
    for a in sectors:
        for b in sectors:
            T = project_to_sector(I, b, sector_out=a)
            if a.k_index == (b.k_index - 1) % 4:
                assert np.abs(T).max() > 0.1
            else:
                assert np.abs(T).max() < 1e-14


def test_project_rejects_non_symmetric_operator():
    params = ModelParams(3)
    basis = enumerate_basis(params)
    sec = build_sector_basis(params, 0, basis)
    with pytest.raises(ValueError):
        project_to_sector(build_number_operator(1, basis), sec, basis=basis)
    assert not commutes_with_rotation(build_number_operator(1, basis), basis)


def test_eigensystem_quality(sol10):
    H = sol10.H
    for sec, sys_ in zip(sol10.sectors, sol10.systems):
        block = project_to_sector(H, sec)
        V, E = sys_.vectors, sys_.energies
        assert np.all(np.diff(E) >= 0)
        assert_allclose(V.conj().T @ V, np.eye(len(E)), atol=1e-10)
        resid = np.linalg.norm(block @ V - V * E, axis=0)
        assert resid.max() <= 1e-9 * np.linalg.norm(block, 2)
        # phase convention: largest component real and positive
        j = np.argmax(np.abs(V), axis=0)
        top = V[j, np.arange(V.shape[1])]
        assert_allclose(top.imag, 0, atol=1e-14)
        assert np.all(top.real > 0)


def test_reflection_labels_and_mirror_sectors(sol10):
    for sys_ in sol10.systems:
        if sys_.k_index in (0, 2):
            assert set(np.unique(sys_.reflection)) <= {-1, 1}
    # reflection maps k to -k, so k=1 and k=3 share a spectrum
    assert_allclose(sol10.systems[1].energies, sol10.systems[3].energies, atol=1e-10)


def test_imbalance_vanishes_in_momentum_eigenstates(sol6):
    I = build_imbalance_operator(sol6.params, sol6.basis)
    for sec, sys_ in zip(sol6.sectors, sol6.systems):
        psi = sec.projector @ sys_.vectors
        vals = np.einsum("ij,ij->j", psi.conj(), I @ psi)
        assert np.abs(vals).max() < 1e-12


def test_ground_energy_trend():
    eps0 = [solve_model(ModelParams(N)).energies[0] / N for N in (10, 20, 30)]
    assert eps0[0] > eps0[1] > eps0[2] > -10.1


def test_diagonalize_sector_direct():
    sys_ = diagonalize_sector(np.array([[2.0, 1.0], [1.0, 2.0]]), 0)
    assert_allclose(sys_.energies, [1, 3])


def test_basis_dump_roundtrip(tmp_path):
    params = ModelParams(4)
    basis = enumerate_basis(params)
    p = tmp_path / "basis.txt"
    write_basis(p, basis)
    first = p.read_text().splitlines()[0]
    assert first == "4 0 0 0"
    assert_array_equal(read_basis(p, params).states, basis.states)


def test_eigenvalue_csv(tmp_path, sol6):
    p = tmp_path / "ev.csv"
    write_eigenvalues(p, sol6.systems, 6)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("sector_k,index_n,E,eps")
    assert len(lines) == sol6.basis.dim + 1


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(2, 5), st.data())
def test_random_states_roundtrip(N, L, data):
    basis = enumerate_basis(ModelParams(N, L))
    j = data.draw(st.integers(0, basis.dim - 1))
    s = basis.states[j]
    assert s.sum() == N
    assert basis.index_of(s) == j
    assert basis.index_of(apply_rotation(s)) == basis.index_of(np.roll(s, 1))
