"""Interval null-projection controls: Gramian route, KKT identities, limits."""

import numpy as np
import pytest

from nsstab.dynamics import (
    build_propagator,
    propagate_linear,
    taylor_green_reference,
    zero_reference,
)
from nsstab.errors import UnreachableTargetError
from nsstab.null_control import (
    build_reachability,
    epsilon_limit_study,
    kkt_identity_check,
    min_norm_control,
    regularized_control,
)
from nsstab.observability import build_forms, truncated_constant
from nsstab.quadmin import QuadraticProgram, solve_constrained_min
from nsstab.spectral import ChiMask, build_actuator, build_space


DT = 1.0 / 64


@pytest.fixture(scope="module")
def tg_setup():
    space = build_space(nu=0.1, K=16, n=16)
    ref = taylor_green_reference(space, a0=0.5, a1=0.25, omega=1.0, horizon=2.0)
    chi = ChiMask.bump(space, center=(np.pi, np.pi), radius=2.4, rho=0.1)
    act = build_actuator(space, chi, M=8)
    bundle = build_reachability(space, ref, 0.0, act, N=4, dt=DT)
    return space, ref, act, bundle


class TestBuildReachability:
    def test_zero_mask_gives_zero_gramian(self, tg_setup):
        space, ref, _, _ = tg_setup
        vals = np.zeros((space.n, space.n))
        chi0 = ChiMask(values=vals, center=(0, 0), radius=0.1, rho=0.1, sup_norm=0.0)
        act0 = build_actuator(space, chi0, M=8)
        b = build_reachability(space, ref, 0.0, act0, N=4, dt=DT)
        assert np.allclose(b.gramian, 0.0)
        assert b.gramian_rank == 0

    def test_single_mode_single_step_closed_form(self):
        # one step over the interval: G = dt * (e^{-alpha * dt * 0 ... }) --
        # with one step of size 1, the CN factor replaces the exponential
        space = build_space(nu=0.3, K=2, n=8)
        ref = zero_reference(space, horizon=2.0)
        chi = ChiMask.uniform(space)
        act = build_actuator(space, chi, M=4)
        b = build_reachability(space, ref, 0.0, act, N=1, dt=1.0)
        # CN one-step stage dual: (I + h/2 L)^{-T} e_1, gain through A^T
        a = space.alphas[0]
        stage = 1.0 / (1.0 + 0.5 * a)
        gains = act.mat[0, :]          # row of the actuator for mode 1
        want = 1.0 * (stage**2) * np.sum(gains**2)
        assert np.isclose(b.gramian[0, 0], want, rtol=1e-12)

    def test_superposition_of_endpoint_maps(self, tg_setup, rng):
        space, ref, act, bundle = tg_setup
        w0 = rng.standard_normal(space.K)
        eta = rng.standard_normal((bundle.n_steps, act.M))
        full, _ = propagate_linear(space, ref, 0.0, w0, act, eta, DT,
                                   propagator=bundle.propagator)
        free_end = bundle.free_map @ w0
        ctrl, _ = propagate_linear(space, ref, 0.0, np.zeros(space.K), act, eta, DT,
                                   propagator=bundle.propagator)
        assert np.allclose(full.endpoint(), free_end + ctrl.endpoint(), atol=1e-12)

    def test_input_rows_match_forward_columns(self, tg_setup, rng):
        # adjoint-swept rows must equal the forward-propagated input map
        space, ref, act, bundle = tg_setup
        psi = rng.standard_normal(bundle.input_rows.shape[1])
        control = bundle.control_from_stacked(psi)
        tr, _ = propagate_linear(space, ref, 0.0, np.zeros(space.K), act,
                                 control.values, DT, propagator=bundle.propagator)
        want = tr.endpoint()[: bundle.N]
        got = bundle.input_rows @ psi
        assert np.allclose(got, want, atol=1e-12 * max(1.0, np.abs(want).max()))


class TestMinNorm:
    def test_zero_state_zero_control(self, tg_setup):
        space, _, _, bundle = tg_setup
        eta = min_norm_control(bundle, np.zeros(space.K))
        assert np.allclose(eta.values, 0.0)

    def test_achieves_null_projection(self, tg_setup, rng):
        space, ref, act, bundle = tg_setup
        for _ in range(5):
            w0 = rng.standard_normal(space.K)
            eta = min_norm_control(bundle, w0)
            tr, _ = propagate_linear(space, ref, 0.0, w0, act, eta.values, DT,
                                     propagator=bundle.propagator)
            assert np.linalg.norm(tr.endpoint()[: bundle.N]) <= 1e-8 * np.linalg.norm(w0)

    def test_linearity(self, tg_setup, rng):
        space, _, _, bundle = tg_setup
        a = rng.standard_normal(space.K)
        b = rng.standard_normal(space.K)
        al, be = 0.7, -1.3
        combo = min_norm_control(bundle, al * a + be * b).values
        split = al * min_norm_control(bundle, a).values + be * min_norm_control(bundle, b).values
        assert np.max(np.abs(combo - split)) <= 1e-9 * max(1e-300, np.max(np.abs(split)))

    def test_matches_generic_qp_oracle(self, tg_setup, rng):
        # stack the decision vector (all step controls) and solve with the
        # generic equality-constrained solver
        space, ref, act, bundle = tg_setup
        w0 = rng.standard_normal(space.K)
        n_dec = bundle.input_rows.shape[1]
        J = bundle.propagator.dt * np.eye(n_dec) / bundle.propagator.dt  # identity: psi scaling
        A = bundle.input_rows
        y = -(bundle.free_map @ w0)[: bundle.N]
        x, _ = solve_constrained_min(QuadraticProgram(J, A, y))
        want = bundle.control_from_stacked(x).values
        got = min_norm_control(bundle, w0).values
        assert np.max(np.abs(got - want)) <= 1e-9 * max(1.0, np.max(np.abs(want)))

    def test_unreachable_raises_with_hint(self):
        # tiny actuator (M=1) cannot null four modes on a short horizon
        space = build_space(nu=0.1, K=16, n=16)
        ref = zero_reference(space, horizon=2.0)
        chi = ChiMask.bump(space, center=(np.pi, np.pi), radius=1.2, rho=0.1)
        act = build_actuator(space, chi, M=1)
        bundle = build_reachability(space, ref, 0.0, act, N=4, dt=DT)
        with pytest.raises(UnreachableTargetError, match="raise M"):
            min_norm_control(bundle, np.ones(space.K))

    def test_projection_already_null_gives_zero_control(self):
        # free flow of modes above N keeps the projection zero: minimal
        # norm control is zero
        space = build_space(nu=0.1, K=8, n=16)
        ref = zero_reference(space, horizon=2.0)
        act = build_actuator(space, ChiMask.uniform(space), M=8)
        bundle = build_reachability(space, ref, 0.0, act, N=2, dt=DT)
        w0 = np.zeros(space.K)
        w0[5] = 3.0
        eta = min_norm_control(bundle, w0)
        assert np.allclose(eta.values, 0.0, atol=1e-12)


class TestRegularized:
    def test_large_eps_recovers_free_flow(self, tg_setup, rng):
        space, _, _, bundle = tg_setup
        w0 = rng.standard_normal(space.K)
        control, v_end, _, _ = regularized_control(bundle, w0, eps=1e12)
        assert np.max(np.abs(control.values)) < 1e-9
        assert np.allclose(v_end, bundle.free_map @ w0, atol=1e-9)

    def test_zero_state(self, tg_setup):
        space, _, _, bundle = tg_setup
        control, v_end, q_traj, _ = regularized_control(bundle, np.zeros(space.K), 1e-4)
        assert np.allclose(control.values, 0.0)
        assert np.allclose(q_traj.states, 0.0)

    def test_kkt_identities_hold(self, tg_setup, rng):
        space, _, _, bundle = tg_setup
        w0 = rng.standard_normal(space.K)
        for eps in (1e-2, 1e-4, 1e-6):
            rep = kkt_identity_check(bundle, w0, eps)
            assert rep["stepwise_max_rel"] <= 1e-9
            assert rep["identity_rel_gap"] <= 1e-8

    def test_identity_scales_quadratically(self, tg_setup, rng):
        space, _, _, bundle = tg_setup
        w0 = rng.standard_normal(space.K)
        r1 = kkt_identity_check(bundle, w0, 1e-4)
        r2 = kkt_identity_check(bundle, 2.0 * w0, 1e-4)
        assert np.isclose(r2["identity_lhs"], 4.0 * r1["identity_lhs"], rtol=1e-10)
        assert np.isclose(r2["identity_rhs"], 4.0 * r1["identity_rhs"], rtol=1e-10)

    def test_endpoint_defect_bounded_by_observability_constant(self, tg_setup, rng):
        # |Pi_N v_eps(tau+1)|^2 <= (eps * D/2) |w0|^2 with the truncated
        # observability constant: the control pairing and the output forms
        # share one quadrature, so the inequality chain is exact arithmetic
        space, ref, act, bundle = tg_setup
        chi = ChiMask.bump(space, center=(np.pi, np.pi), radius=2.4, rho=0.1)
        forms = build_forms(space, ref, 0.0, chi, bundle.N, [act.M], DT,
                            actuator=act)
        D = truncated_constant(forms, act.M)
        w0 = rng.standard_normal(space.K)
        for eps in np.logspace(-2, -8, 7):
            _, v_end, _, _ = regularized_control(bundle, w0, eps)
            lhs = np.sum(v_end[: bundle.N] ** 2)
            assert lhs <= 0.5 * eps * D * (w0 @ w0) * (1 + 1e-10)

    def test_exact_minimum_dominates_ridge_norms(self, tg_setup, rng):
        # the ridge relaxes the endpoint constraint, so its control norm sits
        # below the exact minimal norm and approaches it from below
        space, _, _, bundle = tg_setup
        w0 = rng.standard_normal(space.K)
        star = min_norm_control(bundle, w0).l2_norm()
        for eps in (1e-3, 1e-6, 1e-9):
            control, _, _, _ = regularized_control(bundle, w0, eps)
            assert control.l2_norm() <= star * (1 + 1e-12)

    def test_ridge_objective_never_exceeds_exact_minimum(self, tg_setup, rng):
        space, _, _, bundle = tg_setup
        w0 = rng.standard_normal(space.K)
        star_sq = min_norm_control(bundle, w0).l2_norm_sq()
        for eps in (1e-3, 1e-6):
            control, v_end, _, _ = regularized_control(bundle, w0, eps)
            obj = control.l2_norm_sq() + np.sum(v_end[: bundle.N] ** 2) / eps
            assert obj <= star_sq * (1 + 1e-10)


@pytest.fixture(scope="module")
def broad_bundle():
    """Instance with a Gramian spectrum spread over many decades, so the
    worst-case sqrt(eps) defect rate of the ridge problem is realised."""
    space = build_space(nu=0.2, K=24, n=16)
    ref = taylor_green_reference(space, a0=0.5, a1=0.25, omega=1.0, horizon=2.0)
    chi = ChiMask.bump(space, center=(np.pi, np.pi), radius=1.0, rho=0.1)
    act = build_actuator(space, chi, M=16)
    return space, build_reachability(space, ref, 0.0, act, N=8, dt=DT)


class TestEpsilonLimit:
    def test_zero_state_all_zero(self, tg_setup):
        space, _, _, bundle = tg_setup
        rep = epsilon_limit_study(bundle, np.zeros(space.K), [1e-2, 1e-4])
        assert max(rep["control_gap"]) == 0.0
        assert max(rep["endpoint_defect"]) == 0.0

    def test_monotone_convergence_and_slope(self, broad_bundle, rng):
        space, bundle = broad_bundle
        w0 = rng.standard_normal(space.K)
        rep = epsilon_limit_study(bundle, w0, np.logspace(-2, -8, 7))
        assert rep["defect_monotone"]
        assert rep["gap_monotone"]
        assert 0.3 <= rep["defect_slope"] <= 0.7

    def test_halving_eps_shrinks_defect_like_sqrt_two(self, broad_bundle, rng):
        space, bundle = broad_bundle
        w0 = rng.standard_normal(space.K)
        d1 = np.linalg.norm(regularized_control(bundle, w0, 1e-4)[1][: bundle.N])
        d2 = np.linalg.norm(regularized_control(bundle, w0, 5e-5)[1][: bundle.N])
        assert d1 / d2 == pytest.approx(np.sqrt(2.0), rel=0.2)

    def test_small_eps_close_to_min_norm(self, tg_setup, rng):
        space, _, _, bundle = tg_setup
        w0 = rng.standard_normal(space.K)
        rep = epsilon_limit_study(bundle, w0, [1e-10])
        rel = rep["control_gap"][0] / max(rep["min_norm_value"], 1e-300)
        assert rel <= 1e-4
