import math

import numpy as np
import pytest
import scipy.linalg as sla

from lpfs.errors import (BorderlineError, ConvergenceError, NotStabilizableError, RiccatiBlowUpError,
                         ScenarioError)
from lpfs.propagator import mild_solution, monodromy, transition
from lpfs.scenarios import scenario, switching_scalar
from lpfs.spectral import split
from lpfs.synthesis import (FeedbackLaw, closed_loop_system, deadbeat_residual, deadbeat_unstable,
                            finite_horizon_riccati, horizon_and_epsilon, periodic_riccati,
                            simulate_closed_loop, synthesize, verify_law, zero_law)
from lpfs.system import ControlSubspace, build_system

from oracles import brute_force_lq, periodic_riccati_symplectic, riccati_ivp, transition_ivp


def _split(s):
    return split(monodromy(s))


# ------------------------------------------------------------------ deadbeat


def test_deadbeat_scalar_residual():
    s = scenario("unstable-scalar")
    sp = _split(s)
    db = deadbeat_unstable(s, None, sp)
    assert deadbeat_residual(s, sp, db, [1.0]) < 1e-8
    # closed form: minimum-norm control u(t) = -e^{1-t} e / int_0^1 e^{2(1-s)} ds
    t = np.array([0.0, 0.5, 1.0])
    want = -np.e * np.exp(1 - t) / (np.expm1(2) / 2)
    assert np.allclose(db([1.0])(t)[:, 0], want, rtol=1e-8)


def test_deadbeat_zero_state_zero_control():
    s = scenario("random-unstable")
    sp = _split(s)
    db = deadbeat_unstable(s, None, sp)
    assert np.all(db(np.zeros(s.n_x)).values == 0.0)


def test_deadbeat_heat_each_basis_vector():
    s = scenario("heat-interior")
    sp = _split(s)
    db = deadbeat_unstable(s, None, sp)
    for j in range(sp.n0):
        assert deadbeat_residual(s, sp, db, sp.basis_H1[:, j]) < 1e-6


def test_deadbeat_switching_jump_handled():
    s, _, _ = switching_scalar()
    sp = _split(s)
    db = deadbeat_unstable(s, None, sp)
    assert deadbeat_residual(s, sp, db, [1.0]) < 1e-10
    u = db([1.0])
    assert u(1.0, 1)[0] == pytest.approx(-u(1.0, -1)[0])


def test_deadbeat_requires_true_certificate():
    s = scenario("heat-counterexample")
    with pytest.raises(NotStabilizableError):
        deadbeat_unstable(s, None, _split(s))
    st = scenario("stable-scalar")
    with pytest.raises(ScenarioError):
        deadbeat_unstable(st, None, _split(st))


def test_deadbeat_operator_norm_matches_control_norms():
    s = scenario("random-unstable")
    sp = _split(s)
    db = deadbeat_unstable(s, None, sp)
    L = db.operator_norm()
    r = np.random.default_rng(3)
    for _ in range(5):
        a = r.standard_normal(sp.n0)
        h1 = sp.basis_H1 @ a
        br, bl = db.coefficients(h1)
        # Simpson on the half-step nodes
        h = s.grid.step
        f_r = np.sum(br**2, axis=1)
        f_l = np.sum(bl**2, axis=1)
        norm2 = (h / 6) * (f_r[0:-1:2].sum() + 4 * f_r[1::2].sum() + f_l[2::2].sum())
        assert math.sqrt(norm2) <= L * np.linalg.norm(h1) * (1 + 1e-8)


# ------------------------------------------------------------------ horizon


def test_horizon_delta0_from_delta_bar():
    s = build_system(np.diag([math.log(2.0), -math.log(2.0)]), [[1.0], [0.0]], 1.0)
    sp = _split(s)
    assert abs(sp.delta_bar - 0.5) < 1e-9
    b = horizon_and_epsilon(s, None, sp, deadbeat_unstable(s, None, sp))
    assert abs(b.delta0 - 0.75) < 1e-9


def test_horizon_scalar_inequalities():
    s = scenario("unstable-scalar")
    sp = _split(s)
    b = horizon_and_epsilon(s, None, sp, deadbeat_unstable(s, None, sp))
    assert b.N0 >= 1
    assert 0 < b.eps0 <= b.delta0 - b.delta0**2


def test_horizon_trivial_when_stable():
    s = scenario("stable-scalar")
    b = horizon_and_epsilon(s, None, _split(s), None)
    assert b.N0 == 0


def test_horizon_constant_C_is_small_after_deadbeat():
    # the deadbeat map leaves only the stable part at n0 T
    s = scenario("random-unstable")
    sp = _split(s)
    b = horizon_and_epsilon(s, None, sp, deadbeat_unstable(s, None, sp))
    assert np.isfinite(b.C) and b.C > 0
    assert b.C_rho0 >= 1.0


# ---------------------------------------------------------- finite horizon


def test_finite_riccati_scalar_closed_form():
    s = scenario("unstable-scalar")
    sol, law = finite_horizon_riccati(s, None, 0.1, 2)
    # 1/q solves p' = 2p - 1/eps backward from p(2) = 1
    p0 = 5.0 + (1.0 - 5.0) * math.exp(-4.0)
    assert abs(sol.Q[0, 0, 0] - 1 / p0) < 1e-9
    assert law.period == 2.0 and law.provenance == "deadbeat-LQ"
    assert law.epsilon == 0.1 and law.N == 2


def test_finite_riccati_scalar_brute_force():
    s = scenario("unstable-scalar")
    sol, _ = finite_horizon_riccati(s, None, 0.1, 2)
    h0 = np.array([1.0])
    bf = brute_force_lq(lambda t: s.drift(t), lambda t: s.input(t), 2.0, h0, 64, 0.0, 0.1, np.eye(1))
    assert abs(sol.Q[0, 0, 0] - bf) < 0.02 * bf


def test_finite_riccati_uncontrolled_is_transition_gram():
    s = build_system([[-0.3, 1.0], [0.0, -0.6]], np.zeros((2, 1)), 1.0, 128)
    sol, law = finite_horizon_riccati(s, None, 1.0, 2)
    for i in (0, 100, 300):
        Phi = transition(s, 2.0, sol.times[i])
        assert np.allclose(sol.Q[i], Phi.T @ Phi, atol=1e-12)
    assert np.all(law.gains == 0.0)


def test_finite_riccati_matches_adaptive_oracle():
    s = scenario("oscillator")
    sol, _ = finite_horizon_riccati(s, None, 0.05, 2)
    want = riccati_ivp(lambda t: s.drift(t), lambda t: s.input(t), s.period, np.eye(2), 0.0, 0.05, 2.0)
    assert np.max(np.abs(sol.Q[0] - want)) < 1e-7 * np.max(np.abs(want))


def test_finite_riccati_closed_loop_transition_matches_simulation():
    s = scenario("oscillator")
    sol, law = finite_horizon_riccati(s, None, 0.05, 2)
    rep = verify_law(s, law)
    assert np.allclose(rep.monodromy, sol.closed_loop_transition, atol=1e-6)


def test_finite_riccati_solution_invariants():
    sol, law = finite_horizon_riccati(scenario("random-unstable"), None, 0.01, 3)
    for Q in sol.Q[::50]:
        assert np.max(np.abs(Q - Q.T)) <= 1e-9 * max(1.0, np.max(np.abs(Q)))
        assert np.linalg.eigvalsh(Q)[0] >= -1e-9
    assert np.all(np.isfinite(law.gains))


def test_finite_riccati_blow_up():
    s = build_system([[20.0]], [[0.0]], 1.0)
    with pytest.raises(RiccatiBlowUpError, match="infeasible"):
        finite_horizon_riccati(s, None, 1.0, 1)


def test_finite_riccati_argument_checks():
    s = scenario("unstable-scalar")
    with pytest.raises(ScenarioError):
        finite_horizon_riccati(s, None, 0.0, 1)
    with pytest.raises(ScenarioError):
        finite_horizon_riccati(s, None, 0.1, 0)


@pytest.mark.parametrize("name", ["switching", "unstable-scalar", "oscillator", "rotation-growth",
                                  "time-invariant", "heat-interior", "heat-pstar", "random-unstable"])
def test_finite_horizon_witness(name):
    s = scenario(name)
    sp = _split(s)
    b = horizon_and_epsilon(s, None, sp, deadbeat_unstable(s, None, sp))
    sol, _ = finite_horizon_riccati(s, None, b.eps0 / 2, b.N0, store=False)
    assert np.linalg.norm(sol.closed_loop_transition, 2) <= math.sqrt(b.delta0)


# ---------------------------------------------------------- periodic Riccati


def test_periodic_riccati_uncontrolled_is_lyapunov():
    s = build_system({"kind": "cosine", "params": {"constant": [[-0.5, 1.0], [0.0, -0.8]],
                                                     "cosine": [[0.3, 0.0], [0.2, 0.0]]}},
                     np.zeros((2, 1)), 1.0)
    sol, law = periodic_riccati(s)
    A = transition_ivp(lambda t: s.drift(t), 1.0, 0.0, 2)
    # one-period running cost W = int_0^T Phi(t,0)^T Phi(t,0) dt by Gauss-Legendre
    x, w = np.polynomial.legendre.leggauss(40)
    W = sum(0.5 * wi * (lambda P: P.T @ P)(transition_ivp(lambda t: s.drift(t), 0.5 * (xi + 1), 0.0, 2))
            for xi, wi in zip(x, w))
    want = sla.solve_discrete_lyapunov(A.T, W)
    assert np.max(np.abs(sol.terminal - want)) < 1e-8 * np.max(np.abs(want))
    assert np.all(law.gains == 0.0)


def test_periodic_riccati_scalar_fixed_point():
    sol, law = periodic_riccati(scenario("unstable-scalar"))
    assert abs(sol.terminal[0, 0] - (1 + math.sqrt(2))) < 1e-9
    assert np.allclose(law.gains[:, 0, 0], -(1 + math.sqrt(2)), atol=1e-9)


def test_periodic_riccati_monotone_iterates():
    sol, _ = periodic_riccati(scenario("random-unstable"), keep_iterates=True)
    its = sol.iterates
    assert len(its) == sol.iterations + 1
    for a, b in zip(its, its[1:]):
        assert np.linalg.eigvalsh(b - a)[0] >= -1e-9 * max(1.0, np.linalg.norm(b))


def test_periodic_riccati_matches_adaptive_oracle_inside_period():
    s = scenario("oscillator")
    sol, _ = periodic_riccati(s)
    mid = len(sol.times) // 2
    want = riccati_ivp(lambda t: s.drift(t), lambda t: s.input(t), s.period, sol.terminal, 1.0, 1.0,
                       s.period, t_start=sol.times[mid])
    assert np.max(np.abs(sol.Q[mid] - want)) < 1e-7 * np.max(np.abs(want))


@pytest.mark.parametrize("name", ["oscillator", "random-unstable", "rotation-growth", "switching"])
def test_periodic_riccati_matches_symplectic_oracle(name):
    s = scenario(name)
    sol, _ = periodic_riccati(s)
    want = periodic_riccati_symplectic(lambda t: s.drift(t), lambda t: s.input(t), s.period, s.n_x)
    assert np.max(np.abs(sol.terminal - want)) < 1e-8 * np.max(np.abs(want))


def test_periodic_riccati_law_is_periodic():
    for name in ("oscillator", "heat-interior", "random-unstable"):
        _, law = periodic_riccati(scenario(name))
        assert np.max(np.abs(law.gains[0] - law.gains[-1])) < 1e-8 * max(1.0, np.max(np.abs(law.gains)))


def test_periodic_riccati_switching_law_stabilizes():
    s, _, _ = switching_scalar()
    _, law = periodic_riccati(s)
    assert law.period == 2.0
    assert verify_law(s, law).spectral_radius < 1


def test_periodic_riccati_divergence_signal():
    s = scenario("random-hidden")
    with pytest.raises(ConvergenceError, match="non-stabilizability") as exc:
        periodic_riccati(s)
    assert len(exc.value.trace) > 0


def test_periodic_riccati_iteration_cap():
    with pytest.raises(ConvergenceError, match="did not converge") as exc:
        periodic_riccati(scenario("random-unstable"), max_iters=2)
    assert len(exc.value.trace) == 2


def test_periodic_riccati_seed_validation():
    with pytest.raises(ScenarioError):
        periodic_riccati(scenario("oscillator"), S0=np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_time_invariant_matches_care():
    s = scenario("time-invariant")
    sol, law = periodic_riccati(s)
    A = s.drift(0.0)
    B = s.input(0.0)
    X = sla.solve_continuous_are(A, B, np.eye(3), np.eye(1))
    assert np.max(np.abs(sol.Q - X)) < 1e-6 * np.max(np.abs(X))
    K = law.gains
    mean = K.mean(axis=0)
    assert np.max(np.linalg.norm(K - mean, axis=(1, 2))) / np.linalg.norm(mean) < 1e-4


def _cost(s, law, h0, periods):
    times, y, u = simulate_closed_loop(s, law, h0, periods)
    f = np.sum(y**2, axis=1) + np.sum(u**2, axis=1)
    return times, y, float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(times)))


def test_value_identity():
    s = scenario("random-unstable")
    sol, law = periodic_riccati(s)
    r = np.random.default_rng(7)
    for _ in range(3):
        h0 = r.standard_normal(s.n_x)
        _, _, J = _cost(s, law, h0, 40)
        V = h0 @ sol.Q[0] @ h0
        assert abs(J - V) < 0.01 * V


def test_value_decreases_along_period_samples():
    s = scenario("oscillator")
    sol, law = periodic_riccati(s)
    times, y, _ = _cost(s, law, np.array([1.0, -2.0]), 8)
    idx = np.arange(0, len(times), s.grid.samples_per_period)
    vals = np.array([y[i] @ sol.Q[0] @ y[i] for i in idx])
    assert np.all(np.diff(vals) <= 1e-8 * vals[0])


# ------------------------------------------------------------------ laws


def test_law_json_roundtrip():
    _, law = periodic_riccati(scenario("oscillator"))
    back = FeedbackLaw.from_dict(law.to_dict())
    assert np.array_equal(back.gains, law.gains) and np.array_equal(back.nodes, law.nodes)
    assert back.provenance == "periodic-riccati"


def test_law_validation():
    with pytest.raises(ScenarioError):
        FeedbackLaw(1.0, np.array([0.0, 1.0]), np.full((2, 1, 1), np.nan), np.eye(1), "x")
    with pytest.raises(ScenarioError):
        FeedbackLaw(1.0, np.array([0.0, 0.5]), np.zeros((2, 1, 1)), np.eye(1), "x")
    with pytest.raises(ScenarioError, match="unknown key"):
        FeedbackLaw.from_dict({**zero_law(scenario("oscillator")).to_dict(), "extra": 1})


def test_law_gain_periodic_extension():
    _, stepped_k, _ = switching_scalar()
    assert stepped_k.gain([0.5, 2.5, 1.5, 3.5])[:, 0, 0].tolist() == [1.0, 1.0, 2.0, 2.0]
    assert stepped_k.gain([2.0], -1)[0, 0, 0] == 2.0
    assert stepped_k.gain([2.0], 1)[0, 0, 0] == 1.0


# ------------------------------------------------------------------ verify


def test_verify_zero_law_on_stable_system():
    s = scenario("random-stable")
    rep = verify_law(s, zero_law(s))
    assert abs(rep.spectral_radius - _split(s).delta_bar) < 1e-7
    assert rep.stable and rep.decay_rate > 0


def test_verify_switching_stepped_law():
    s, stepped_k, _ = switching_scalar()
    rep = verify_law(s, stepped_k)
    assert abs(rep.monodromy[0, 0] - math.exp(-1)) < 1e-6
    assert rep.stable


@pytest.mark.parametrize("c", [-2.0, -0.5, 0.3, 1.0, 2.0])
def test_verify_switching_constant_gain(c):
    s, _, constant_k = switching_scalar()
    rep = verify_law(s, constant_k(c))
    assert abs(rep.monodromy[0, 0] - 1.0) < 1e-9
    assert not rep.stable


def test_verify_period_mismatch():
    s = scenario("oscillator")
    law = FeedbackLaw(1.5, np.array([0.0, 1.5]), np.zeros((2, 1, 2)), np.eye(1), "x")
    with pytest.raises(ScenarioError, match="multiple"):
        verify_law(s, law)
    bad = FeedbackLaw(1.0, np.array([0.0, 1.0]), np.zeros((2, 1, 3)), np.eye(1), "x")
    with pytest.raises(ScenarioError, match="dimensions"):
        verify_law(s, bad)


def test_verify_multi_period_law():
    s = scenario("oscillator")
    _, law = finite_horizon_riccati(s, None, 0.05, 2)
    rep = verify_law(s, law)
    assert rep.period == 2.0
    assert rep.stable


def test_report_envelope_bounds_trajectories():
    s = scenario("random-unstable")
    res = synthesize(s)
    rep = res.report
    assert rep.decay_rate > 0
    for j in range(s.n_x):
        times, y, _ = simulate_closed_loop(s, res.law, np.eye(s.n_x)[j], 6)
        bound = rep.overshoot * np.exp(-rep.decay_rate * times)
        assert np.all(np.linalg.norm(y, axis=1) <= bound * (1 + 1e-9))


def test_closed_loop_system_drift():
    s, stepped_k, _ = switching_scalar()
    cl = closed_loop_system(s, stepped_k)
    assert cl.drift(0.5)[0, 0] == 1.0 and cl.drift(1.5)[0, 0] == -2.0


# ------------------------------------------------------------------ pipeline


def test_synthesize_stable_system_returns_zero_law():
    s = scenario("stable-scalar")
    res = synthesize(s)
    assert np.all(res.law.gains == 0.0) and res.law.provenance == "open-loop"
    assert abs(res.report.spectral_radius - _split(s).delta_bar) < 1e-7


def test_synthesize_heat_interior():
    res = synthesize(scenario("heat-interior"))
    assert res.report.spectral_radius < 1 and res.witness_ok
    assert res.law.period == pytest.approx(0.1)


def test_synthesize_counterexample_reports_margin():
    with pytest.raises(NotStabilizableError, match="margin_b") as exc:
        synthesize(scenario("heat-counterexample"))
    assert exc.value.certificate is not None and not exc.value.certificate.verdict_b


def test_synthesize_restricted_subspace():
    s = scenario("heat-pstar")
    res = synthesize(s)
    assert res.law.m0 == 2 and res.report.stable


def test_synthesize_refuses_borderline_stable():
    s = build_system(np.diag([-1e-7, 0.5]), np.eye(2), 1.0)
    with pytest.raises(BorderlineError):
        synthesize(s)
    res = synthesize(s, allow_borderline=True)
    assert res.report.stable


def test_synthesize_proceeds_on_unit_multiplier_classified_unstable():
    s, _, _ = switching_scalar()
    res = synthesize(s)
    assert res.report.spectral_radius < 1 and res.witness_ok


def test_synthesize_user_horizon_and_epsilon():
    s = scenario("oscillator")
    res = synthesize(s, epsilon=0.01, N=3)
    assert res.epsilon == 0.01 and res.N == 3 and res.report.stable


def test_synthesize_with_explicit_subspace():
    s = build_system([[0.4, 0.0], [0.0, 0.3]], np.eye(2), 1.0)
    Z = ControlSubspace("basis", np.array([[1.0], [0.0]]))
    with pytest.raises(NotStabilizableError):
        synthesize(s, Z)
    Z2 = ControlSubspace.spanned_by(np.array([[1.0], [1.0]]))
    assert synthesize(s, Z2).report.stable


def test_simulate_open_loop_matches_mild_solution():
    s = scenario("oscillator")
    times, y, u = simulate_closed_loop(s, None, np.array([1.0, 0.0]), 2)
    ref = mild_solution(s, None, 0.0, np.array([1.0, 0.0]), None, 2.0)
    assert np.allclose(y, ref.states) and np.all(u == 0.0)
