"""Scenario runners behind the command line interface.

Each runner takes a validated :class:`~quasiplast.config.ScenarioConfig` and
returns the output files (name to text) and a list of named checks.  Nothing
here touches the file system, so runs are easy to compare byte for byte.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import control, convergence, evi, forward
from .model import build_model


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    relation: str
    passed: bool

    def to_dict(self):
        return {"value": _clean(self.value), "threshold": _clean(self.threshold),
                "relation": self.relation, "passed": bool(self.passed)}


def _clean(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def at_most(name, value, threshold):
    return Check(name, value, threshold, "<=", bool(value <= threshold))


def at_least(name, value, threshold):
    return Check(name, value, threshold, ">=", bool(value >= threshold))


def flag(name, ok):
    return Check(name, 1.0 if ok else 0.0, 1.0, "==", bool(ok))


EXPERIMENTS = {
    "forward": {
        "summary": "implicit time stepping of the elastoplastic stress problem for one load program",
        "checks": [
            "complementarity: max(-lambda), max(phi), max(lambda*|phi|) <= check_tol",
            "kinematic identity C^-1 sigma - eps(u) - H^-1 chi = 0 at every node",
            "equilibrium B Sigma = ell at every node",
            "discrete energy identity of the backward-difference scheme",
        ],
        "outputs": ["trajectory.json", "trajectory.csv", "summary.json"],
    },
    "converge": {
        "summary": "refinement study against the finest grid",
        "checks": [
            "L-infinity error of Sigma has observed order >= rate_threshold (expected 1/2)",
            "H1 distances of (Sigma, u) decrease within h1_slack; finest/coarsest <= h1_ratio",
            "per-cell certificate |S_rate(ell) - 2 Sigma'|_A <= |S_rate(ell)|_A",
            "multiplier norm identity |lambda|_L2 = |H^-1 chi'|_L2 / sigma0",
            "multiplier L2 errors: finest/coarsest <= lambda_ratio",
        ],
        "outputs": ["trajectory.json", "convergence.csv", "summary.json"],
    },
    "evi-check": {
        "summary": "stop/play operators by catching-up on random inputs, and the stress "
                   "problem solved as an EVI on the self-equilibrated admissible set",
        "checks": [
            "play-operator Hoelder estimate on random pairs (interval, ball, von Mises) for each exponent",
            "discrete dissipation inequalities on every solved input",
            "catching-up on the reduced EVI reproduces the forward stresses to equivalence_tol",
        ],
        "outputs": ["trajectory.json", "summary.json"],
    },
    "control": {
        "summary": "projected gradient on the time-discrete optimal control problem",
        "checks": [
            "objective history nonincreasing, every iterate admissible",
            "final projected-gradient norm <= tol",
            "optional approximation experiment: successive minimizer distances decrease; "
            "anchored problem started at its anchor takes zero steps",
        ],
        "outputs": ["optimization.csv", "control.json", "summary.json"],
    },
}


def _model(cfg):
    return build_model(cfg.model.name, **cfg.model.parameters())


def _solver(cfg):
    return forward.SolverOptions(tol=cfg.options.solver_tol, max_iter=cfg.options.max_newton)


def _dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def run_forward_experiment(cfg, jobs=1):
    m = _model(cfg)
    loads = forward.LoadProgram.from_waveform(m, cfg.load.waveform, cfg.load.amplitude,
                                              cfg.load.T, cfg.load.N)
    traj = forward.run_forward(m, loads, _solver(cfg))
    tol = cfg.options.check_tol
    rep = forward.forward_report(traj, m, tol)
    checks = [
        at_most("complementarity_max_neg_lambda", rep["complementarity_max_neg_lambda"], tol),
        at_most("complementarity_max_phi", rep["complementarity_max_phi"], tol),
        at_most("complementarity_max_lambda_phi", rep["complementarity_max_lambda_phi"], tol),
        flag("kinematic_identity", rep["kinematic_identity_ok"]),
        flag("equilibrium", rep["equilibrium_ok"]),
        flag("energy_identity", rep["energy_identity_ok"]),
    ]
    files = {"trajectory.json": _dumps(traj.to_dict()), "trajectory.csv": traj.to_csv(m)}
    return files, checks


def run_converge_experiment(cfg, jobs=1):
    m = _model(cfg)
    o = cfg.options
    study = convergence.RefinementStudy(
        m, convergence.LoadSpec(cfg.load.waveform, cfg.load.amplitude, cfg.load.T),
        tuple(o.steps), o.reference_steps, _solver(cfg), jobs,
    )
    rate = convergence.rate_study_Linfty(study, o.rate_threshold)
    h1 = convergence.h1_cauchy_study(study, o.h1_slack, o.h1_ratio)
    lam = convergence.multiplier_study(study, 1e-10, o.lambda_ratio)
    checks = [
        at_least("linf_observed_order", rate.order, o.rate_threshold),
        flag("h1_monotone_within_slack", h1["monotone"]),
        at_most("h1_finest_over_coarsest", h1["ratio"], o.h1_ratio),
        flag("h1_cell_certificate", h1["certificate_ok"]),
        at_most("multiplier_identity_rel_error", max(lam["identity_rel_error"]), 1e-10),
        at_most("lambda_l2_finest_over_coarsest", lam["ratio"], o.lambda_ratio),
    ]
    rows = [["tau", "linf_error", "linf_order", "sigma_h1_error", "u_h1_error", "lambda_l2_error"]]
    for k, tau in enumerate(rate.taus):
        order = rate.orders[k - 1] if k else float("nan")
        rows.append([tau, rate.errors[k], order, h1["sigma_h1"][k], h1["u_h1"][k],
                     lam["lambda_l2_errors"][k]])
    files = {
        "convergence.csv": convergence.to_csv(rows),
        "trajectory.json": _dumps(study.reference.to_dict()),
    }
    return files, checks


def random_evi_pair(kind, rng, law=None):
    """Two catching-up problems on one random grid for the set type ``kind``."""
    K = int(rng.integers(2, 16))
    times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 1.0, K))])
    if kind == "interval":
        r = rng.uniform(0.1, 2.0)
        cset, metric, k, scale = evi.Interval(-r, r), None, 1, 2 * r
    elif kind == "ball":
        cset = evi.Ball(rng.normal(size=2), rng.uniform(0.1, 2.0))
        A = rng.normal(size=(2, 2))
        metric, k, scale = A @ A.T + 0.2 * np.eye(2), 2, 2 * cset.radius
    elif kind == "vonmises":
        cset = evi.VonMisesSet(law)
        metric, k, scale = cset.natural_metric(), cset.dim, 2 * law.sigma0
    else:
        raise KeyError(kind)
    u1 = np.cumsum(rng.normal(size=(K + 1, k)), axis=0) * scale
    eps = 10.0 ** rng.uniform(-4, 0)
    u2 = u1 + eps * scale * rng.normal(size=(K + 1, k))
    x1 = cset.project(rng.normal(size=k) * scale, metric)
    x2 = cset.project(rng.normal(size=k) * scale, metric)
    return (evi.EviProblem(cset, times, u1, x1, metric),
            evi.EviProblem(cset, times, u2, x2, metric))


def holder_sweep(kind, pairs, exponents, rng, law=None):
    """Minimum Hoelder slack per exponent and worst dissipation margin over random pairs."""
    worst = {p: math.inf for p in exponents}
    dissipation_ok = True
    for _ in range(pairs):
        p1, p2 = random_evi_pair(kind, rng, law)
        sols = (evi.solve(p1), evi.solve(p2))
        for p in exponents:
            worst[p] = min(worst[p], evi.holder_check(p1, p2, p, sols).slack)
        for prob, sol in zip((p1, p2), sols):
            dissipation_ok &= evi.dissipation_check(prob, sol).ok
    return worst, dissipation_ok


def reduced_equivalence_error(m, traj):
    """Max relative A-norm gap between forward stresses and the reduced EVI route."""
    prob = evi.reduced_evi_problem(m, traj.times, traj.ell)
    S = evi.stresses_from_reduced(m, prob)
    gap = np.linalg.norm(m.sigma_coords(S - traj.Sigma), axis=1)
    size = np.maximum(1.0, np.linalg.norm(m.sigma_coords(traj.Sigma), axis=1))
    return float(np.max(gap / size))


def run_evi_experiment(cfg, jobs=1):
    m = _model(cfg)
    o = cfg.options
    rng = np.random.default_rng(cfg.seed)
    checks = []
    dissipation = True
    for kind in ("interval", "ball", "vonmises"):
        worst, ok = holder_sweep(kind, o.pairs, o.exponent_values(), rng, m.law)
        dissipation &= ok
        for p, slack in worst.items():
            label = "inf" if math.isinf(p) else str(p)
            checks.append(at_least(f"holder_min_slack_{kind}_p{label}", slack, 0.0))
    checks.append(flag("dissipation_inequalities", dissipation))
    loads = forward.LoadProgram.from_waveform(m, cfg.load.waveform, cfg.load.amplitude,
                                              cfg.load.T, cfg.load.N)
    traj = forward.run_forward(m, loads, _solver(cfg))
    checks.append(at_most("reduced_evi_equivalence", reduced_equivalence_error(m, traj),
                          o.equivalence_tol))
    return {"trajectory.json": _dumps(traj.to_dict())}, checks


def control_problem(cfg, m, N):
    o = cfg.options
    target = np.asarray(o.target, dtype=float)
    if o.objective in ("psi1", "psi2"):
        target = np.broadcast_to(target, (m.n,)).copy() if target.ndim == 0 else target
    elif target.ndim == 0:
        target = np.full((m.npts, m.nc), float(target))
    return control.ControlProblem(
        m, cfg.load.T, N, control.Objective(o.objective, target, o.nu),
        control.AdmissibleSet(o.admissible, o.rho), None, _solver(cfg),
    )


def run_control_experiment(cfg, jobs=1):
    m = _model(cfg)
    o = cfg.options
    cp = control_problem(cfg, m, cfg.load.N)
    g0 = forward.LoadProgram.from_waveform(m, cfg.load.waveform, cfg.load.amplitude,
                                           cfg.load.T, cfg.load.N).g_nodes
    g0 = control.project_admissible(cp.admissible, m, g0, cp.tau)
    opts = control.PGOptions(tol=o.tol, max_iter=o.max_iter, fd_step=o.fd_step, jobs=jobs)
    res = control.projected_gradient(cp, g0, opts)
    values = [h["objective"] for h in res.history]
    checks = [
        flag("objective_nonincreasing", all(b <= a for a, b in zip(values, values[1:]))),
        flag("iterates_admissible", cp.admissible.contains(m, res.g)),
        at_most("final_gradient_norm", res.history[-1]["gradient_norm"]
                if res.status == "converged" else math.inf, o.tol),
    ]
    payload = res.to_dict(cp.times)
    if not cp.admissible.exact_projection:
        payload["projection"] = "approximate (nodewise radial scaling)"
    if o.approximation_steps:
        steps = tuple(o.approximation_steps)
        base = control_problem(cfg, m, steps[0])

        def init(t):
            return np.stack([np.interp(t, cp.times, g0[:, c]) for c in range(m.m)], axis=1)

        rep = control.approximation_experiment(base, steps, init, opts)
        checks.append(flag("minimizer_distances_decrease", rep["cauchy_decrease"]))
        checks.append(flag("anchored_start_takes_zero_steps", rep["anchor_zero_steps"]))
        payload["approximation"] = {
            "steps": list(steps),
            "successive_h1_distances": rep["successive_h1_distances"],
            "objectives": [r.get("objective") for r in rep["minimizers"]],
            "anchored_steps": [a.get("steps") for a in rep["anchored"]],
        }
    files = {"optimization.csv": res.to_csv(), "control.json": _dumps(payload)}
    return files, checks


RUNNERS = {
    "forward": run_forward_experiment,
    "converge": run_converge_experiment,
    "evi-check": run_evi_experiment,
    "control": run_control_experiment,
}
