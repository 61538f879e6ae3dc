import numpy as np
import pytest

from ftmas import subspaces as ss
from ftmas.errors import NotControlledInvariant
from ftmas.plant import OUTAGE, ActuatorMode, FaultSpec, assemble_fault, auv_preset, healthy_modes
from oracles import isa_case_ok, random_triple


def span(*cols, n):
    return ss.image(np.column_stack([np.eye(n)[:, c] for c in cols]))


def same(U, V):
    return U.dim == V.dim and ss.contains(U, V) and ss.contains(V, U)


# -- elementary operations ----------------------------------------------------


def test_kernel_of_coordinate_row():
    assert same(ss.kernel([1.0, 0, 0, 0]), span(1, 2, 3, n=4))


def test_intersect_coordinate_planes():
    assert same(ss.intersect(span(0, 1, n=3), span(1, 2, n=3)), span(1, n=3))


def test_preimage_nilpotent():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert same(ss.preimage(A, span(1, n=2)), span(0, n=2))


def test_sum_and_complement():
    U = ss.sum(span(0, n=3), span(2, n=3))
    assert same(U, span(0, 2, n=3))
    assert same(ss.complement(U), span(1, n=3))
    assert ss.complement(ss.zero_space(3)).dim == 3


def test_basis_orthonormal():
    rng = np.random.default_rng(1)
    V = ss.image(rng.normal(size=(5, 3)))
    np.testing.assert_allclose(V.basis.T @ V.basis, np.eye(3), atol=1e-12)


# -- maximal controlled invariant subspace ---------------------------------------


def test_vstar_c_zero_is_full():
    rng = np.random.default_rng(0)
    V = ss.max_controlled_invariant(rng.normal(size=(3, 3)), rng.normal(size=(3, 1)), np.zeros((1, 3)))
    assert V.dim == 3


def test_vstar_full_input_is_kernel():
    rng = np.random.default_rng(0)
    C = np.array([[1.0, 2.0, 0.0]])
    V = ss.max_controlled_invariant(rng.normal(size=(3, 3)), np.eye(3), C)
    assert same(V, ss.kernel(C))


def test_vstar_double_integrator_trivial():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    V = ss.max_controlled_invariant(A, np.array([[0.0], [1.0]]), np.array([[1.0, 0.0]]))
    assert V.dim == 0


def test_isa_properties_on_random_triples():
    rng = np.random.default_rng(2024)
    failures = [case for case in range(200) if not isa_case_ok(*random_triple(rng), rng)]
    assert failures == []


# -- friend ---------------------------------------------------------------------


def test_friend_trivial_subspace():
    F = ss.friend(np.eye(2), np.ones((2, 1)), ss.zero_space(2))
    np.testing.assert_array_equal(F, np.zeros((1, 2)))


def test_friend_invariant_full_space():
    F = ss.friend(np.diag([1.0, 2.0]), np.zeros((2, 1)), ss.full_space(2))
    np.testing.assert_allclose(F, 0.0, atol=1e-12)


def test_friend_rotation_example():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    Br = np.array([[0.0], [1.0]])
    V = span(0, n=2)
    F = ss.friend(A, Br, V)
    np.testing.assert_allclose(F, [[1.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose((A + Br @ F) @ [1.0, 0.0], 0.0, atol=1e-12)


def test_friend_rejects_non_invariant():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(NotControlledInvariant):
        ss.friend(A, np.array([[1.0], [0.0]]), span(0, n=2))


# -- decomposition ----------------------------------------------------------------


def test_decompose_trivial_subspace():
    rng = np.random.default_rng(5)
    A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    dec = ss.decompose(A, B, B, np.ones((3, 1)), np.eye(1, 3), ss.zero_space(3))
    np.testing.assert_allclose(dec.T, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(dec.A22, A, atol=1e-12)
    np.testing.assert_allclose(dec.B2, B, atol=1e-12)
    assert dec.k == 0


def test_decompose_full_subspace():
    rng = np.random.default_rng(6)
    A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    dec = ss.decompose(A, B, B, np.ones((3, 1)), np.zeros((1, 3)), ss.full_space(3))
    assert dec.A21.size == 0 and dec.C2.size == 0


def test_decompose_auv_reassembly():
    model, _ = auv_preset()
    modes = list(healthy_modes(4))
    modes[1] = ActuatorMode(OUTAGE)
    part = assemble_fault(model, FaultSpec(0, tuple(modes)))
    V = ss.max_controlled_invariant(model.A, part.B_r, model.C)
    assert V.dim == 3 == ss.kernel(model.C).dim
    dec = ss.decompose(model.A, part.B_r, model.B, model.B_w, model.C, V)
    assert np.linalg.norm(dec.T @ dec.T.T - np.eye(4)) <= 1e-10
    np.testing.assert_allclose(dec.T @ dec.Abar @ dec.T.T, model.A, atol=1e-10)
    np.testing.assert_allclose(model.C @ dec.T1, 0.0, atol=1e-12)


def test_friend_and_decompose_consistent():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(60):
        A, B, C = random_triple(rng)
        V = ss.max_controlled_invariant(A, B, C)
        if V.dim == 0 or V.dim == A.shape[0]:
            continue
        F = ss.friend(A, B, V)
        dec = ss.decompose(A, B, B, np.zeros((A.shape[0], 1)), C, V)
        # A21 + Br2 (F T1) = 0 in the new coordinates
        np.testing.assert_allclose(dec.A21, -dec.Br2 @ (F @ dec.T1), atol=1e-8)
        checked += 1
    assert checked > 5
