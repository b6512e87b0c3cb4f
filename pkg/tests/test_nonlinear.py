"""Nonlinear closed loop: contraction probe, Duhamel identity, basin sweep."""

import numpy as np
import pytest

from nsstab.dynamics import Trajectory, bilinear_b, taylor_green_reference
from nsstab.feedback import riccati_solve
from nsstab.nonlinear import (
    basin_sweep,
    build_stepper,
    contraction_probe,
    duhamel_bound_check,
    simulate_closed_loop,
    xi_map,
    zlambda_norm,
)
from nsstab.spectral import ChiMask, build_actuator, build_space

DT = 1.0 / 128


@pytest.fixture(scope="module")
def loop_setup():
    space = build_space(nu=0.6, K=24, n=16, m_max=160)
    ref = taylor_green_reference(space, a0=1.2, a1=0.6, omega=0.5, horizon=15.0)
    chi = ChiMask.bump(space, center=(np.pi, np.pi), radius=2.8, rho=0.1)
    act = build_actuator(space, chi, M=32)
    law = riccati_solve(space, ref, lam=1.0, actuator=act, T_h=14.0, dt=DT)
    stepper = build_stepper(space, ref, law, 0.0, 6.0)
    return space, ref, law, stepper


def unit_v_direction(space, rng):
    d = rng.standard_normal(space.K)
    return d / np.sqrt(space.alphas @ d**2)


class TestZLambdaNorm:
    def test_zero_iff_zero(self, loop_setup):
        space, _, law, stepper = loop_setup
        z = Trajectory(times=stepper.times, states=np.zeros((stepper.n_steps + 1,
                                                             space.K)))
        assert zlambda_norm(space, z, law.lam) == 0.0

    def test_degree_one_homogeneity(self, loop_setup, rng):
        space, _, law, stepper = loop_setup
        states = rng.standard_normal((stepper.n_steps + 1, space.K))
        z = Trajectory(times=stepper.times, states=states)
        z3 = Trajectory(times=stepper.times, states=3.0 * states)
        assert zlambda_norm(space, z3, law.lam) == pytest.approx(
            3.0 * zlambda_norm(space, z, law.lam), rel=1e-12)


class TestSimulateClosedLoop:
    def test_zero_state_forever(self, loop_setup):
        space, ref, law, stepper = loop_setup
        tr, rep = simulate_closed_loop(space, ref, law, np.zeros(space.K), 6.0,
                                       stepper=stepper)
        assert np.allclose(tr.states, 0.0)
        assert rep["blowup_t"] is None

    def test_tiny_state_matches_linear_loop(self, loop_setup, rng):
        space, ref, law, stepper = loop_setup
        v0 = 1e-6 * unit_v_direction(space, rng)
        nl, _ = simulate_closed_loop(space, ref, law, v0, 6.0, stepper=stepper)
        lin = stepper.run_linear(v0)
        assert np.max(np.abs(nl.states - lin.states)) <= 1e-9

    def test_decay_at_gate_scale(self, loop_setup, rng):
        space, ref, law, stepper = loop_setup
        for _ in range(3):
            v0 = 2.0 * unit_v_direction(space, rng)
            tr, rep = simulate_closed_loop(space, ref, law, v0, 6.0,
                                           eps_gate=2.0, theta_cap=2.0,
                                           stepper=stepper)
            assert rep["inside_gate"]
            assert rep["decayed"]
            assert rep["theta"] <= 2.0

    def test_quadratic_consistency_slope(self, loop_setup, rng):
        # |nonlinear - linear| in C([0,1], H) scales like |v0|_V^2
        space, ref, law, _ = loop_setup
        st1 = build_stepper(space, ref, law, 0.0, 1.0)
        d = unit_v_direction(space, rng)
        scales = np.array([0.01, 0.03, 0.1, 0.3])
        gaps = []
        for s in scales:
            nl, _ = simulate_closed_loop(space, ref, law, s * d, 1.0, stepper=st1)
            lin = st1.run_linear(s * d)
            gaps.append(np.max(np.linalg.norm(nl.states - lin.states, axis=1)))
        slope = np.polyfit(np.log(scales), np.log(gaps), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.3)

    def test_integrator_second_order(self, rng):
        # half versus full step converge to one trajectory at order two
        space = build_space(nu=0.6, K=8, n=16)
        ref = taylor_green_reference(space, a0=1.0, a1=0.5, omega=1.0, horizon=7.0)
        chi = ChiMask.bump(space, center=(np.pi, np.pi), radius=2.8, rho=0.1)
        act = build_actuator(space, chi, M=8)
        v0 = 0.5 * unit_v_direction(space, rng)
        ends = []
        for dt in (1.0 / 32, 1.0 / 64, 1.0 / 128):
            law = riccati_solve(space, ref, lam=1.0, actuator=act, T_h=6.0, dt=dt)
            tr, _ = simulate_closed_loop(space, ref, law, v0, 2.0)
            ends.append(tr.endpoint())
        d1 = np.linalg.norm(ends[0] - ends[1])
        d2 = np.linalg.norm(ends[1] - ends[2])
        assert d1 / d2 == pytest.approx(4.0, rel=0.5)


class TestXiMap:
    def test_zero_input_gives_linear_solution(self, loop_setup, rng):
        space, ref, law, stepper = loop_setup
        v0 = 0.3 * unit_v_direction(space, rng)
        zero_traj = Trajectory(times=stepper.times,
                               states=np.zeros((stepper.n_steps + 1, space.K)))
        xi0 = xi_map(space, ref, law, v0, zero_traj, stepper=stepper)
        lin = stepper.run_linear(v0)
        assert np.allclose(xi0.states, lin.states, atol=1e-14)

    def test_zero_everything(self, loop_setup):
        space, ref, law, stepper = loop_setup
        zero_traj = Trajectory(times=stepper.times,
                               states=np.zeros((stepper.n_steps + 1, space.K)))
        out = xi_map(space, ref, law, np.zeros(space.K), zero_traj, stepper=stepper)
        assert np.allclose(out.states, 0.0)

    def test_fixed_point_is_nonlinear_trajectory(self, loop_setup, rng):
        space, ref, law, stepper = loop_setup
        v0 = 0.5 * unit_v_direction(space, rng)
        probe = contraction_probe(space, ref, law, v0, 6.0, rng, pairs=0,
                                  stepper=stepper)
        nl, _ = simulate_closed_loop(space, ref, law, v0, 6.0, stepper=stepper)
        gap = zlambda_norm(space, Trajectory(times=nl.times,
                                             states=nl.states
                                             - probe["fixed_point"].states),
                           law.lam)
        assert gap <= 1e-8


class TestContractionProbe:
    def test_zero_state_zero_ratio(self, loop_setup, rng):
        space, ref, law, stepper = loop_setup
        rep = contraction_probe(space, ref, law, np.zeros(space.K), 6.0, rng,
                                pairs=0, stepper=stepper)
        assert rep["gamma_hat"] == 0.0
        assert rep["converged"]

    def test_geometric_convergence_below_one(self, loop_setup, rng):
        space, ref, law, stepper = loop_setup
        v0 = 2.0 * unit_v_direction(space, rng)
        rep = contraction_probe(space, ref, law, v0, 6.0, rng, pairs=3,
                                stepper=stepper)
        assert rep["converged"]
        assert 0.0 < rep["gamma_hat"] < 1.0
        assert rep["pairs_within_headroom"]

    def test_ratio_scales_linearly_with_amplitude(self, loop_setup, rng):
        space, ref, law, stepper = loop_setup
        d = unit_v_direction(space, rng)
        scales = np.array([0.05, 0.2, 0.8])
        gammas = []
        for s in scales:
            rep = contraction_probe(space, ref, law, s * d, 6.0, rng, pairs=0,
                                    stepper=stepper)
            gammas.append(rep["gamma_hat"])
        slope = np.polyfit(np.log(scales), np.log(gammas), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.3)

    def test_fixed_point_independent_of_start(self, loop_setup, rng):
        space, ref, law, stepper = loop_setup
        v0 = 0.5 * unit_v_direction(space, rng)
        probe = contraction_probe(space, ref, law, v0, 6.0, rng, pairs=0,
                                  stepper=stepper)
        a = Trajectory(times=stepper.times,
                       states=np.zeros((stepper.n_steps + 1, space.K)))
        for _ in range(30):
            a = stepper.run_xi(v0, a.states)
        gap = zlambda_norm(space, Trajectory(times=a.times,
                                             states=a.states
                                             - probe["fixed_point"].states),
                           law.lam)
        assert gap <= 1e-8


class TestDuhamel:
    def test_zero_forcing_is_plain_decay(self, loop_setup):
        space, ref, law, stepper = loop_setup
        rep = duhamel_bound_check(space, ref, law,
                                  [np.zeros((stepper.n_steps, space.K))], 6.0,
                                  stepper=stepper)
        assert rep["identity_max_gap"] <= 1e-14
        assert rep["C1"] == 0.0

    def test_single_pulse_identity(self, loop_setup, rng):
        space, ref, law, stepper = loop_setup
        f = np.zeros((stepper.n_steps, space.K))
        f[17] = rng.standard_normal(space.K)
        rep = duhamel_bound_check(space, ref, law, [f], 6.0, stepper=stepper)
        assert rep["identity_max_gap"] <= 1e-10

    def test_batch_constant_finite_and_stable(self, rng):
        # the forcing batch is a fixed smooth function of time, so its grid
        # sampling refines rather than changing its roughness
        space = build_space(nu=0.6, K=8, n=16)
        ref = taylor_green_reference(space, a0=1.0, a1=0.5, omega=1.0, horizon=7.0)
        chi = ChiMask.bump(space, center=(np.pi, np.pi), radius=2.8, rho=0.1)
        act = build_actuator(space, chi, M=8)
        dirs = rng.standard_normal((3, space.K))
        freqs = rng.uniform(0.5, 3.0, 3)
        phases = rng.uniform(0, 2 * np.pi, 3)
        c1s = []
        for dt in (1.0 / 64, 1.0 / 128):
            law = riccati_solve(space, ref, lam=1.0, actuator=act, T_h=6.0, dt=dt)
            st = build_stepper(space, ref, law, 0.0, 4.0)
            t_mid = dt * (np.arange(st.n_steps) + 0.5)
            fs = [np.cos(w * t_mid + p)[:, None] * d[None, :]
                  for d, w, p in zip(dirs, freqs, phases)]
            rep = duhamel_bound_check(space, ref, law, fs, 4.0, stepper=st)
            assert np.isfinite(rep["C1"])
            c1s.append(rep["C1"])
        assert c1s[0] == pytest.approx(c1s[1], rel=0.1)


class TestBasinSweep:
    def test_scale_zero_decays(self, loop_setup, rng):
        space, ref, law, _ = loop_setup
        rep = basin_sweep(space, ref, law, scales=[0.0, 1.0], directions=2,
                          n_units=3.0, rng=rng, theta_cap=4.0)
        assert all(row[0] == "decay" for row in rep["outcomes"])

    def test_small_scales_all_decay(self, loop_setup, rng):
        space, ref, law, _ = loop_setup
        rep = basin_sweep(space, ref, law, scales=[0.25, 0.5, 1.0], directions=3,
                          n_units=3.0, rng=rng, theta_cap=4.0)
        assert rep["epsilon_hat"] >= 1.0
        assert all(o == "decay" for row in rep["outcomes"] for o in row)

    def test_extreme_amplitude_recorded_not_asserted(self, loop_setup, rng):
        # far outside the gate the integrator may leave its step bound; the
        # sweep records the outcome instead of failing
        space, ref, law, _ = loop_setup
        rep = basin_sweep(space, ref, law, scales=[1.0, 3000.0], directions=1,
                          n_units=2.0, rng=rng, theta_cap=4.0)
        assert rep["outcomes"][0][0] == "decay"
        assert rep["outcomes"][0][1] in ("no-decay", "blowup")
        assert rep["epsilon_hat"] == 1.0

    def test_advection_neutral_in_energy_and_enstrophy(self, loop_setup, rng):
        # on the 2D torus the truncated advection term is exactly neutral in
        # both the H and V inner products, which is why the swept basin has
        # no finite edge on this model
        space, *_ = loop_setup
        for _ in range(5):
            v = rng.standard_normal(space.K)
            b = bilinear_b(space, v, v)
            scale = np.linalg.norm(v) ** 3 + 1.0
            assert abs(b @ v) <= 1e-11 * scale
            assert abs((space.alphas * b) @ v) <= 1e-11 * scale * space.alphas[-1]


class TestBilinearEstimate:
    def test_advection_bound_constant_stable_across_truncation(self, rng):
        # |B(a)|_H <= C |a|_V |a|_DL with a constant that does not drift as
        # the truncation grows
        cs = []
        for K in (12, 24):
            space = build_space(nu=0.6, K=K, n=16)
            worst = 0.0
            for _ in range(20):
                a = rng.standard_normal(space.K)
                h, v, dl = space.norms(bilinear_b(space, a, a)), space.norms(a)[1], \
                    space.norms(a)[2]
                worst = max(worst, h[0] / (v * dl))
            cs.append(worst)
        assert cs[1] <= 2.0 * cs[0]
