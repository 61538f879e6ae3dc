import warnings
from types import SimpleNamespace

import numpy as np
import pytest

from ftmas.errors import AllActuatorsLost, DegenerateSubspaceWarning
from ftmas.matops import h_inf_norm
from ftmas.plant import STUCK, ActuatorMode, AgentModel, FaultSpec, assemble_fault, healthy_modes
from ftmas.synth_reconfig import (
    corollary_variant,
    reconfigured_command,
    reconfigured_control,
    solve_matching,
    solve_stuck,
    stuck_compensation,
    synthesize_reconfig,
    with_stuck_values,
)


def hurwitz(M):
    return np.max(np.linalg.eigvals(M).real) < 0


def test_no_fault_identity_recovery(sentry):
    model = sentry[0]
    g = synthesize_reconfig(model, assemble_fault(model, FaultSpec(0, healthy_modes(4))))
    assert g.matching_residual <= 1e-8 and g.exact
    np.testing.assert_array_equal(g.u_C, 0.0)
    # K2r reproduces the healthy input outside V*
    np.testing.assert_allclose(g.decomposition.Br2 @ g.K2r, g.decomposition.B2, atol=1e-12)
    assert hurwitz(g.closed_loop)


def test_outage_exact_and_stable(sentry, outage_gains):
    g = outage_gains
    assert g.exact and g.friend_residual <= 1e-8
    assert hurwitz(sentry[0].A + g.partition.B_r @ g.K1r)
    np.testing.assert_allclose(g.closed_loop, sentry[0].A + g.partition.B_r @ g.K1r)


def test_lmi_certificate(outage_gains, loe_stuck_gains):
    for g in (outage_gains, loe_stuck_gains):
        assert g.method == "lmi"
        assert g.lmi_margin < -1e-7
        assert g.gamma_f == pytest.approx(g.alpha ** -0.5)


def test_gamma_f_bounds_true_norm(sentry, outage_gains, loe_stuck_gains):
    model = sentry[0]
    for g in (outage_gains, loe_stuck_gains):
        T = g.decomposition.T
        norm = h_inf_norm(T.T @ g.closed_loop @ T, T.T @ model.B_w, np.eye(model.n))
        assert norm <= g.gamma_f * (1 + 1e-6)
        assert g.gamma_f <= 1.05 * norm


def test_stuck_compensation_sentry(loe_stuck_gains):
    g = loe_stuck_gains
    np.testing.assert_allclose(g.u_C, [0.0, 0.0, -1.0], atol=1e-10)
    assert g.stuck_residual <= 1e-12 and g.exact


def test_degenerate_subspace_path():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(3, 3))
    model = AgentModel(A, rng.normal(size=(3, 2)), np.eye(3), rng.normal(size=(3, 1)))
    with pytest.warns(DegenerateSubspaceWarning):
        g = synthesize_reconfig(model, assemble_fault(model, FaultSpec(0, healthy_modes(2))))
    assert g.decomposition.k == 0
    assert hurwitz(g.closed_loop)
    assert h_inf_norm(g.closed_loop, model.B_w, np.eye(3)) <= g.gamma_f * (1 + 1e-6)


def test_matching_orthogonal_target():
    dec = SimpleNamespace(Br2=np.array([[1.0], [0.0]]), B2=np.array([[0.0], [1.0]]))
    K2r, res = solve_matching(dec)
    np.testing.assert_array_equal(K2r, [[0.0]])
    assert res == pytest.approx(1.0)


def test_matching_linear_in_target():
    rng = np.random.default_rng(2)
    Br2, B2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 4))
    K1, _ = solve_matching(SimpleNamespace(Br2=Br2, B2=B2))
    K2, _ = solve_matching(SimpleNamespace(Br2=Br2, B2=2 * B2))
    np.testing.assert_allclose(K2, 2 * K1)


def test_stuck_zero_and_orthogonal():
    Br = np.array([[1.0], [0.0]])
    Bs = np.array([[0.0], [1.0]])
    u, res = stuck_compensation(Br, Bs, [0.0])
    np.testing.assert_array_equal(u, [0.0])
    assert res == 0.0
    u, res = stuck_compensation(Br, Bs, [2.0])
    np.testing.assert_allclose(u, [0.0])
    assert res == pytest.approx(2.0)


def test_solve_stuck_needs_values(sentry):
    model = sentry[0]
    part = assemble_fault(model, FaultSpec(0, (ActuatorMode(STUCK),) + healthy_modes(3)))
    with pytest.raises(ValueError):
        solve_stuck(part)
    u, res = solve_stuck(part, [1.0])
    assert res <= 1e-12


def test_reconfigured_control_zero_and_linear(outage_gains, rng):
    g = outage_gains
    np.testing.assert_array_equal(reconfigured_control(g, np.zeros(4), np.zeros(4)), np.zeros(4))
    xi, ua = rng.normal(size=4), rng.normal(size=4)
    a = reconfigured_command(g, xi, ua) - g.u_C
    b = reconfigured_command(g, 2 * xi, 2 * ua) - g.u_C
    np.testing.assert_allclose(b, 2 * a)
    # lost actuator receives nothing
    assert reconfigured_control(g, xi, ua)[1] == 0.0


def test_stuck_actuator_holds_value(loe_stuck_gains, rng):
    u = reconfigured_control(loe_stuck_gains, rng.normal(size=4), rng.normal(size=4))
    assert u[1] == 1.0


def test_with_stuck_values(loe_stuck_gains):
    g = with_stuck_values(loe_stuck_gains, [0.5])
    np.testing.assert_allclose(g.u_C, [0.0, 0.0, -0.5], atol=1e-10)
    np.testing.assert_allclose(loe_stuck_gains.u_C, [0.0, 0.0, -1.0], atol=1e-10)


def test_corollary_equivalence(sentry, outage_gains):
    g = corollary_variant("outage", sentry[0], outage=[1])
    np.testing.assert_allclose(g.K1r, outage_gains.K1r)
    assert g.gamma_f == outage_gains.gamma_f


def test_corollary_stuck_only_exact(sentry):
    g = corollary_variant("stuck", sentry[0], stuck={1: 0.8})
    assert g.exact
    np.testing.assert_allclose(g.partition.B_r @ g.u_C, -0.8 * sentry[0].B[:, 1], atol=1e-15)


def test_corollary_all_outage(sentry):
    with pytest.raises(AllActuatorsLost):
        corollary_variant("outage", sentry[0], outage=[0, 1, 2, 3])


def test_corollary_loe_continuity():
    rng = np.random.default_rng(21)
    model = AgentModel(rng.normal(size=(3, 3)) - 2 * np.eye(3), rng.normal(size=(3, 2)),
                       rng.normal(size=(1, 3)), rng.normal(size=(3, 1)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = synthesize_reconfig(model, assemble_fault(model, FaultSpec(0, healthy_modes(2))))
        near = corollary_variant("loe", model, gammas=[0.999, 0.999])
    assert abs(near.gamma_f - base.gamma_f) <= 1e-2 * base.gamma_f
    assert hurwitz(near.closed_loop)


def test_corollary_unknown_kind(sentry):
    with pytest.raises(ValueError):
        corollary_variant("drift", sentry[0])
