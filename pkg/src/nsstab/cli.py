"""Configuration-driven experiment runner.

    nsstab <subcommand> --config <path> [--out <dir>] [--seed <int>]

Subcommands: reference, observability, null-control, stabilize, feedback,
closed-loop, basin, all.  Every run writes a manifest with the config hash,
library versions, seed, and wall time.  Exit codes: 0 success, 2 config
error, 3 numerical failure, 4 assertion failure.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .dynamics import Trajectory
from .errors import ConfigError, NsstabError, VerificationError
from .feedback import (
    closed_loop_linear,
    dp_check,
    lyapunov_check,
    optimal_cost_check,
    riccati_residual,
    riccati_solve,
)
from .nonlinear import basin_sweep, build_stepper, contraction_probe, simulate_closed_loop
from .null_control import build_reachability, epsilon_limit_study, kkt_identity_check, min_norm_control
from .observability import build_forms, full_constant, h1_l2_ratio, select_m1, truncated_constant
from .plots import emit_plot
from .spectral import build_actuator
from .stabilizer import choose_n, stabilize, weighted_control_norm


def _atomic_write(path, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(x)) for x in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_json(path, payload):
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True,
                                   default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Trajectory):
        return {"t0": float(obj.times[0]), "t1": float(obj.times[-1])}
    raise TypeError(f"not serializable: {type(obj)}")


class Pipeline:
    """Lazily built shared state for the subcommands of one run."""

    def __init__(self, cfg: ExperimentConfig, rng):
        self.cfg = cfg
        self.rng = rng
        self._cache = {}

    def _get(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def space(self):
        return self._get("space", self.cfg.build_space)

    @property
    def reference(self):
        return self._get("reference", lambda: self.cfg.build_reference(self.space))

    @property
    def chi(self):
        return self._get("chi", lambda: self.cfg.build_chi(self.space))

    def choice(self, lam):
        c = self.cfg
        return self._get(("choice", round(lam, 12)), lambda: choose_n(
            self.space, self.reference, self.chi, lam, c.control.M_list,
            n_max=c.time.n_max, dt=c.time.dt, slack=c.control.slack,
            pinv_rtol=c.tolerances.pinv_rtol, N_cap=c.control.N_max))

    @property
    def law(self):
        c = self.cfg
        lam_hat = c.control.lam * c.control.lambda_hat_factor

        def build():
            choice = self.choice(lam_hat)
            M = choice.M1 if choice.M1 else max(c.control.M_list[0], 8)
            act = build_actuator(self.space, self.chi, M)
            return riccati_solve(self.space, self.reference, c.control.lam, act,
                                 c.time.T_h, c.time.dt,
                                 cap=c.tolerances.riccati_cap,
                                 verify_horizon=True)
        return self._get("law", build)


def _trajectory_rows(space, trajectory):
    return trajectory.norm_table(space)


def cmd_reference(p: Pipeline, out):
    ref, space = p.reference, p.space
    ts = np.linspace(0.0, min(ref.horizon, 8.0), 129)
    rows = []
    for t in ts:
        u = ref.u_at(t)
        h, v, _ = space.norms(u)
        hh = np.linalg.norm(ref.forcing_at(t))
        rows.append((t, h, v, hh))
    csv_path = os.path.join(out, "reference.csv")
    write_csv(csv_path, ["t", "u_h", "u_v", "forcing_h"], rows)
    write_json(os.path.join(out, "reference.json"),
               {"w_norm": ref.w_norm, "horizon": ref.horizon,
                "preset": p.cfg.reference.preset})
    emit_plot(csv_path, "line", os.path.join(out, "reference.svg"),
              title="reference norms")
    return ["reference.csv", "reference.json", "reference.svg"]


def cmd_observability(p: Pipeline, out):
    c = p.cfg
    choice = p.choice(c.control.lam)
    N = min(max(choice.N, 4), p.space.K)
    forms = build_forms(p.space, p.reference, 0.0, p.chi, N, c.control.M_list,
                        c.time.dt)
    rep = select_m1(forms, slack=c.control.slack, rtol=c.tolerances.pinv_rtol)
    table = [(M, truncated_constant(forms, M, c.tolerances.pinv_rtol))
             for M in forms.M_list]
    payload = {"N": N, "M_list": list(forms.M_list),
               "D_table": {str(m): d for m, d in table},
               "D_inf": full_constant(forms, c.tolerances.pinv_rtol),
               "M1": rep["M1"], "C_h1l2": h1_l2_ratio(forms)}
    write_json(os.path.join(out, "observability.json"), payload)
    csv_path = os.path.join(out, "dm_table.csv")
    write_csv(csv_path, ["M", "D"],
              [(m, d) for m, d in table if np.isfinite(d)])
    emit_plot(csv_path, "staircase", os.path.join(out, "dm_staircase.svg"),
              title="truncated observability constant")
    return ["observability.json", "dm_table.csv", "dm_staircase.svg"]


def cmd_null_control(p: Pipeline, out):
    c = p.cfg
    choice = p.choice(c.control.lam)
    N = min(max(choice.N, 2), p.space.K)
    M = choice.M1 if choice.M1 else max(c.control.M_list[0], 8)
    act = build_actuator(p.space, p.chi, M)
    bundle = build_reachability(p.space, p.reference, 0.0, act, N, c.time.dt,
                                pinv_rtol=c.tolerances.pinv_rtol)
    w0 = p.rng.standard_normal(p.space.K)
    control = min_norm_control(bundle, w0, c.tolerances.pinv_rtol,
                               c.tolerances.null_tol)
    kkt = [kkt_identity_check(bundle, w0, eps) for eps in (1e-2, 1e-4, 1e-6)]
    study = epsilon_limit_study(bundle, w0, np.logspace(-2, -8, 7),
                                c.tolerances.pinv_rtol)
    write_json(os.path.join(out, "null_control.json"),
               {"N": N, "M": M, "kkt_checks": kkt, "epsilon_study": study,
                "min_norm_l2": control.l2_norm()})
    csv_path = os.path.join(out, "min_norm_control.csv")
    write_csv(csv_path, ["t"] + [f"eta_{i}" for i in range(M)], control.table())
    return ["null_control.json", "min_norm_control.csv"]


def cmd_stabilize(p: Pipeline, out):
    c = p.cfg
    choice = p.choice(c.control.lam)
    v0 = p.rng.standard_normal(p.space.K)
    run = stabilize(p.space, p.reference, p.chi, v0, c.control.lam,
                    n_max=c.time.n_max, M_list=c.control.M_list, dt=c.time.dt,
                    slack=c.control.slack, pinv_rtol=c.tolerances.pinv_rtol,
                    null_tol=c.tolerances.null_tol, choice=choice)
    summary = run.summary()
    summary["kappa2"] = weighted_control_norm(run, c.control.lam / 2.0)
    if not summary["integer_decay_ok"]:
        raise VerificationError("integer-time decay chain violated")
    t = run.trajectory.times
    v0_h = np.linalg.norm(v0)
    bound = np.sqrt(run.kappa1) * v0_h * np.exp(-c.control.lam * t / 2.0)
    table = run.trajectory.norm_table(p.space)
    csv_path = os.path.join(out, "stabilize_decay.csv")
    write_csv(csv_path, ["t", "v_h", "v_v", "bound_h"],
              np.column_stack([table[:, :3], bound]))
    write_json(os.path.join(out, "stabilize.json"), summary)
    emit_plot(csv_path, "decay", os.path.join(out, "stabilize_decay.svg"),
              title="stabilized decay")
    return ["stabilize_decay.csv", "stabilize.json", "stabilize_decay.svg"]


def cmd_feedback(p: Pipeline, out):
    c = p.cfg
    law = p.law
    stride = max(1, law.n_steps // 64)
    np.savez_compressed(os.path.join(out, "feedback_law.npz"),
                        times=law.times[::stride], Qt=law.Qt[::stride],
                        lam=law.lam, M=law.M, T_h=law.T_h, stride=stride)
    v0 = p.rng.standard_normal(p.space.K)
    interior = [law.T_h / 8, law.T_h / 4, law.T_h / 2]
    sim, cl_rep = closed_loop_linear(p.space, p.reference, law, 0.0, v0,
                                     min(c.time.n_max, law.T_h - 1.0))
    report = {
        "lambda": law.lam, "M": law.M, "T_h": law.T_h,
        "horizon_gate": law.horizon_gate,
        "max_gain_norm": law.max_gain_norm(),
        "dp": dp_check(law, v0, 0.0, splits=[law.T_h / 4, law.T_h / 2]),
        "optimal_cost": optimal_cost_check(p.space, p.reference, law, 1.0, v0),
        "riccati_residual": riccati_residual(p.space, p.reference, law, interior),
        "lyapunov": lyapunov_check(p.space, p.reference, law, 0.0, v0,
                                   min(c.time.n_max, law.T_h - 1.0)),
        "closed_loop": cl_rep,
    }
    write_json(os.path.join(out, "feedback.json"), report)
    table = sim.norm_table(p.space)
    v0_h = np.linalg.norm(v0)
    bound = np.sqrt(max(cl_rep["kappa_h"], 1.0)) * v0_h \
        * np.exp(-law.lam * (sim.times - sim.times[0]) / 2.0)
    csv_path = os.path.join(out, "feedback_decay.csv")
    write_csv(csv_path, ["t", "v_h", "v_v", "bound_h"],
              np.column_stack([table[:, :3], bound]))
    emit_plot(csv_path, "decay", os.path.join(out, "feedback_decay.svg"),
              title="feedback closed-loop decay")
    return ["feedback_law.npz", "feedback.json", "feedback_decay.csv",
            "feedback_decay.svg"]


def cmd_closed_loop(p: Pipeline, out):
    c = p.cfg
    law = p.law
    d = p.rng.standard_normal(p.space.K)
    d /= np.sqrt(p.space.alphas @ d**2)
    v0 = c.nonlinear.eps_star * d
    n_units = min(c.nonlinear.sim_units, law.T_h - 1.0)
    stepper = build_stepper(p.space, p.reference, law, 0.0, n_units)
    trajectory, rep = simulate_closed_loop(
        p.space, p.reference, law, v0, n_units, eps_gate=c.nonlinear.eps_star,
        theta_cap=c.nonlinear.theta_star, stepper=stepper)
    probe = contraction_probe(p.space, p.reference, law, v0, n_units, p.rng,
                              pairs=2, stepper=stepper)
    rep["contraction"] = {k: probe[k] for k in
                          ("gamma_hat", "iterations", "converged",
                           "pair_ratios", "pairs_within_headroom")}
    write_json(os.path.join(out, "closed_loop.json"), rep)
    if rep["inside_gate"] and not rep["decayed"]:
        raise VerificationError("nonlinear decay violated inside the gate")
    if trajectory is not None:
        csv_path = os.path.join(out, "closed_loop.csv")
        write_csv(csv_path, ["t", "v_h", "v_v", "v_dl"],
                  trajectory.norm_table(p.space))
        emit_plot(csv_path, "decay", os.path.join(out, "closed_loop.svg"),
                  title="nonlinear closed loop")
        return ["closed_loop.json", "closed_loop.csv", "closed_loop.svg"]
    return ["closed_loop.json"]


def cmd_basin(p: Pipeline, out):
    c = p.cfg
    rep = basin_sweep(p.space, p.reference, p.law, c.nonlinear.basin_scales,
                      c.nonlinear.basin_directions,
                      min(c.nonlinear.sim_units, c.time.T_h - 1.0), p.rng,
                      theta_cap=c.nonlinear.theta_star * 10.0)
    rep["directions"] = c.nonlinear.basin_directions
    path = os.path.join(out, "basin.json")
    write_json(path, rep)
    emit_plot(path, "heatmap", os.path.join(out, "basin.svg"),
              title="basin of attraction sweep")
    return ["basin.json", "basin.svg"]


COMMANDS = {
    "reference": cmd_reference,
    "observability": cmd_observability,
    "null-control": cmd_null_control,
    "stabilize": cmd_stabilize,
    "feedback": cmd_feedback,
    "closed-loop": cmd_closed_loop,
    "basin": cmd_basin,
}


def run(subcommand: str, config_path: str, out_dir: str | None = None,
        seed: int | None = None) -> int:
    started = time.time()
    try:
        cfg = ExperimentConfig.load(config_path)
        if seed is not None:
            cfg.seed = seed
        out = out_dir or cfg.output_dir
        os.makedirs(out, exist_ok=True)
        rng = np.random.default_rng(cfg.seed)
        pipeline = Pipeline(cfg, rng)
        names = ([subcommand] if subcommand != "all" else list(COMMANDS))
        artifacts = []
        for name in names:
            artifacts += COMMANDS[name](pipeline, out)
        write_json(os.path.join(out, "manifest.json"), {
            "subcommand": subcommand,
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "versions": {"nsstab": __version__,
                         "numpy": np.__version__,
                         "python": sys.version.split()[0]},
            "wall_time_s": round(time.time() - started, 3),
            "artifacts": sorted(artifacts),
        })
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except VerificationError as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return 4
    except NsstabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nsstab",
        description="stabilization experiments on the truncated flow model")
    parser.add_argument("subcommand", choices=list(COMMANDS) + ["all"])
    parser.add_argument("--config", required=True, help="JSON config path")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    args = parser.parse_args(argv)
    return run(args.subcommand, args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
