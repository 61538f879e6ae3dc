import numpy as np
import pytest

from ftmas.errors import AllActuatorsLost
from ftmas.plant import (
    LOE,
    OUTAGE,
    STUCK,
    ActuatorMode,
    AgentModel,
    DisturbanceSpec,
    FaultSpec,
    assemble_fault,
    auv_preset,
    disturbance_suite,
    effective_input,
    healthy_modes,
    leader_input_bound,
    sample_disturbance,
    signal_energy,
)


@pytest.fixture(scope="module")
def sentry():
    return auv_preset()[0]


def test_preset_values(sentry):
    assert sentry.A[1, 1] == -0.709
    np.testing.assert_allclose(sentry.B[:, 1], 1e-3 * np.array([0.44, -0.06, -0.49, 0.0]))
    assert (sentry.C @ sentry.B_w).item() == pytest.approx(0.023)
    assert sentry.is_stabilizable()


def test_preset_input_structure(sentry):
    np.testing.assert_array_equal(sentry.B[:, 0], sentry.B[:, 2])
    np.testing.assert_array_equal(sentry.B[:, 1], sentry.B[:, 3])
    assert np.linalg.matrix_rank(sentry.B) == 2


def test_unknown_preset():
    with pytest.raises(KeyError):
        auv_preset("nereus")


def test_leader_bound_positive(sentry):
    _, leader = auv_preset()
    u0M = leader_input_bound(sentry, leader, 120.0)
    assert u0M > 0
    np.testing.assert_array_equal(leader.reference(50.0), [1.0, 0, 0, 0])
    np.testing.assert_array_equal(leader.reference(0.0), [0.5, 0, 0, 0])


def test_model_dimension_check():
    with pytest.raises(ValueError):
        AgentModel(np.eye(2), np.ones((3, 1)), np.eye(2), np.ones((2, 1)))


def test_loe_bounds():
    with pytest.raises(ValueError):
        ActuatorMode(LOE, 1.0)
    with pytest.raises(ValueError):
        ActuatorMode(LOE, 0.0)


def test_fault_timing_check():
    with pytest.raises(ValueError):
        FaultSpec(0, healthy_modes(4), t_f=10, t_r=5)


# -- fault partitions ------------------------------------------------------------


def test_all_healthy_partition(sentry):
    part = assemble_fault(sentry, FaultSpec(0, healthy_modes(4)))
    np.testing.assert_array_equal(part.B_r, sentry.B)
    assert part.B_o.shape[1] == 0 and part.B_s.shape[1] == 0 and part.u_s.size == 0


def test_outage_partition(sentry):
    modes = (ActuatorMode(), ActuatorMode(OUTAGE), ActuatorMode(), ActuatorMode())
    part = assemble_fault(sentry, FaultSpec(0, modes))
    np.testing.assert_array_equal(part.B_o, sentry.B[:, [1]])
    np.testing.assert_array_equal(part.B_r, sentry.B[:, [0, 2, 3]])


def test_loe_and_stuck_partition(sentry):
    modes = (ActuatorMode(LOE, 0.7), ActuatorMode(STUCK, 1.0), ActuatorMode(), ActuatorMode())
    part = assemble_fault(sentry, FaultSpec(1, modes))
    np.testing.assert_array_equal(part.B_s, sentry.B[:, [1]])
    np.testing.assert_array_equal(part.u_s, [1.0])
    np.testing.assert_allclose(part.B_r, np.column_stack([0.7 * sentry.B[:, 0], sentry.B[:, 2], sentry.B[:, 3]]))


def test_all_lost(sentry):
    with pytest.raises(AllActuatorsLost):
        assemble_fault(sentry, FaultSpec(0, tuple(ActuatorMode(OUTAGE) for _ in range(4))))


def test_partition_roundtrip(sentry):
    rng = np.random.default_rng(0)
    modes = (ActuatorMode(STUCK, 0.3), ActuatorMode(LOE, 0.4), ActuatorMode(OUTAGE), ActuatorMode())
    part = assemble_fault(sentry, FaultSpec(0, modes))
    u_r = rng.normal(size=part.m_r)
    Beff, off = effective_input(sentry, modes)
    lhs = Beff @ part.scatter(u_r) + off
    rhs = part.B_s @ part.u_s + part.B_r @ u_r
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-18)


def test_estimates_used_for_design(sentry):
    truth = (ActuatorMode(LOE, 0.7),) + healthy_modes(3)
    est = (ActuatorMode(LOE, 0.5),) + healthy_modes(3)
    spec = FaultSpec(0, truth, estimated=est)
    assert assemble_fault(sentry, spec).gamma[0] == 0.7
    assert assemble_fault(sentry, spec, use_estimates=True).gamma[0] == 0.5


def test_loe_continuity(sentry):
    for g in (0.9, 0.99, 0.999):
        modes = tuple(ActuatorMode(LOE, g) for _ in range(4))
        part = assemble_fault(sentry, FaultSpec(0, modes))
        assert np.linalg.norm(part.B_r - sentry.B) <= (1 - g) * np.linalg.norm(sentry.B) + 1e-15


def test_stuck_unknown_value_filled(sentry):
    modes = (ActuatorMode(STUCK),) + healthy_modes(3)
    part = assemble_fault(sentry, FaultSpec(0, modes))
    assert np.isnan(part.u_s[0])
    part = assemble_fault(sentry, FaultSpec(0, modes), stuck_values=[2.5, 0, 0, 0])
    assert part.u_s[0] == 2.5


# -- disturbances ------------------------------------------------------------------


def test_zero_disturbance():
    assert not np.any(sample_disturbance(DisturbanceSpec(), np.arange(10) * 0.1))


def test_random_walk_without_noise_is_constant():
    v = sample_disturbance(DisturbanceSpec("gauss_markov", mu=0.0, sigma=0.0, v0=0.1), np.arange(100) * 0.01)
    np.testing.assert_array_equal(v, 0.1)


def test_gauss_markov_deterministic_by_seed():
    t = np.arange(1000) * 0.01
    spec = DisturbanceSpec("gauss_markov", mu=0.5, sigma=0.2, seed=7)
    np.testing.assert_array_equal(sample_disturbance(spec, t), sample_disturbance(spec, t))
    other = DisturbanceSpec("gauss_markov", mu=0.5, sigma=0.2, seed=8)
    assert not np.array_equal(sample_disturbance(spec, t), sample_disturbance(other, t))


def test_gauss_markov_stationary_variance():
    h, mu, sigma = 0.01, 2.0, 0.3
    t = np.arange(100_000) * h
    v = sample_disturbance(DisturbanceSpec("gauss_markov", mu=mu, sigma=sigma, seed=3), t)
    assert np.var(v[2000:]) == pytest.approx(sigma**2 / (2 * mu), rel=0.1)


def test_deterministic_energy_closed_form():
    h = 1e-3
    t = np.arange(0, 400, h)
    v = sample_disturbance(DisturbanceSpec("deterministic", terms=((1.0, 0.1, 1.0, 0.0),)), t)
    # int e^{-0.2 t} sin^2 t dt = 1/(2*0.2) - 0.2/(2*(0.04+4))
    exact = 1 / 0.4 - 0.2 / (2 * 4.04)
    assert signal_energy(v, h) == pytest.approx(exact, abs=1e-6)


def test_deterministic_needs_decay():
    with pytest.raises(ValueError):
        DisturbanceSpec("deterministic", terms=((1.0, 0.0, 1.0, 0.0),))


def test_suite_is_finite_energy():
    t = np.arange(0, 200, 0.01)
    suite = disturbance_suite()
    assert len(suite) == 10
    assert all(0 < signal_energy(sample_disturbance(s, t), 0.01) < np.inf for s in suite)
