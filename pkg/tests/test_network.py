import numpy as np
import pytest

from ftmas.errors import NoSpanningTree
from ftmas.network import build_topology, check_coupling, coupling_gains


def test_chain_laplacian():
    top = build_topology([(0, 1)], {0})
    np.testing.assert_array_equal(top.L22, [[1.0, 0.0], [-1.0, 1.0]])
    assert top.d0_star == 1
    np.testing.assert_array_equal(top.L.sum(axis=1), 0.0)


def test_no_pins():
    with pytest.raises(NoSpanningTree):
        build_topology([(0, 1)], set())


def test_unreachable_follower():
    with pytest.raises(NoSpanningTree):
        build_topology([(0, 1)], {0}, n_followers=3)


def test_ring_is_m_matrix():
    top = build_topology([(i, (i + 1) % 5) for i in range(5)], {0})
    assert np.all(np.linalg.eigvals(top.L22).real > 0)


def test_chain_coupling_gains():
    top = build_topology([(0, 1)], {0})
    cc = coupling_gains(top, u0M=1.0, safety=1.1)
    # C2 = diag(q / p) with q = (1, 2), p = (2, 1)
    np.testing.assert_allclose(np.diag(cc.C2), [0.5, 2.0])
    np.testing.assert_allclose(cc.c0, [1.1, 2.2])
    S = cc.C2 @ top.L22.T + top.L22 @ cc.C2
    assert cc.c3 == pytest.approx(np.linalg.eigvalsh(S)[0], rel=1e-5)
    # agent 1: u0M - d_1 c_10 + c_00 = 1 - 2.2 + 1.1
    assert 1.0 - top.d[1] * cc.c0[1] + cc.c0[0] == pytest.approx(-0.1)
    mat, agent = check_coupling(top, cc, 1.0)
    assert mat > 0 and agent < 0


def test_single_follower():
    top = build_topology([], {0})
    cc = coupling_gains(top, u0M=3.0, safety=1.1)
    np.testing.assert_allclose(cc.C2, [[1.0]])
    assert cc.c3 == pytest.approx(2.0, rel=1e-5)
    np.testing.assert_allclose(cc.c0, [3.3])


def test_zero_leader_input_uses_floor():
    top = build_topology([(0, 1)], {0})
    cc = coupling_gains(top, u0M=0.0)
    assert np.all(cc.c0 > 0)
    np.testing.assert_allclose(cc.c0, 1.1e-6 * np.array([1.0, 2.0]))


def test_scaling_c2():
    top = build_topology([(0, 1), (1, 2)], {0})
    a, b = coupling_gains(top, 1.0), coupling_gains(top, 1.0, c2_scale=10.0)
    np.testing.assert_allclose(b.C2, 10 * a.C2)
    assert b.c3 == pytest.approx(10 * a.c3)


def random_spanning_tree(rng):
    N = int(rng.integers(1, 9))
    order = rng.permutation(N)
    edges = [(int(order[rng.integers(0, k)]), int(order[k])) for k in range(1, N)]
    extra = [(int(j), int(i)) for j, i in rng.integers(0, N, size=(int(rng.integers(0, N + 1)), 2)) if i != j]
    pins = {int(order[0])} | {int(p) for p in rng.integers(0, N, size=int(rng.integers(0, 3)))}
    return build_topology(edges + extra, pins, n_followers=N)


def test_random_spanning_trees():
    rng = np.random.default_rng(99)
    for _ in range(100):
        top = random_spanning_tree(rng)
        one = np.ones(top.n_followers)
        assert np.all(np.linalg.solve(top.L22.T, one) > 0)
        assert np.all(np.linalg.solve(top.L22, one) > 0)
        u0M = float(rng.uniform(0.1, 10))
        mat, agent = check_coupling(top, coupling_gains(top, u0M), u0M)
        assert mat > 0 and agent < 0
