"""The ten acceptance criteria, each at its stated tolerance and time budget."""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from quasiplast import control as ct
from quasiplast import convergence as cv
from quasiplast.config import load_config
from quasiplast.experiments import control_problem, holder_sweep, reduced_equivalence_error
from quasiplast.forward import LoadProgram, check_complementarity, run_forward
from quasiplast.model import build_model, isotropic_law

from oracles import ScalarHysteresis, elastic_amplitude, elastic_control_qp, saddle_point_stress

pytestmark = pytest.mark.slow

SCENARIOS = os.path.join(os.path.dirname(__file__), os.pardir, "scenarios")
PLASTIC_LOADS = {"uniaxial": cv.LoadSpec("cycle", 3.0), "patch2d": cv.LoadSpec("cycle", 2.5)}
MODELS = ("uniaxial", "patch2d")


@pytest.fixture(scope="module")
def studies():
    """Refinement studies on T/8 ... T/512 with reference T/1024, solved once, timed."""
    out = {}
    for name in MODELS:
        study = cv.RefinementStudy(build_model(name), PLASTIC_LOADS[name])
        start = time.perf_counter()
        study.solve_all()
        _ = study.reference
        out[name] = (study, time.perf_counter() - start)
    return out


def test_c01_elastic_exactness(criterion):
    worst, times = 0.0, {}
    for name in MODELS:
        model = build_model(name)
        amp = elastic_amplitude(model, 0.9)
        start = time.perf_counter()
        trajs = [run_forward(model, LoadProgram.from_waveform(model, "cycle", amp, T=1.0, N=N))
                 for N in (4, 16, 64, 256)]
        times[name] = time.perf_counter() - start
        for traj in trajs:
            refs = np.array([saddle_point_stress(model, ell) for ell in traj.ell])
            floor = 1e-4 * np.abs(refs).max()
            for S, ref in zip(traj.Sigma, refs):
                worst = max(worst, np.abs(S - ref).max() / max(np.abs(ref).max(), floor))
    ok = worst <= 1e-10 and times["uniaxial"] < 1.0 and times["patch2d"] < 30.0
    criterion(1, "elastic exactness", ok,
              f"max rel error {worst:.2e} (<= 1e-10), time uniaxial {times['uniaxial']:.2f}s (< 1), "
              f"patch2d {times['patch2d']:.2f}s (< 30)")
    assert ok


def test_c02_uniaxial_hysteresis_oracle(criterion):
    model = build_model("uniaxial")
    osc = ScalarHysteresis(100.0, 150.0, 20.0, 1.0)
    # load to +4, unload, reverse to -4, reload to +4, unload to 0
    loads = LoadProgram.from_function(lambda t: [4.0 * math.sin(2 * math.pi * t)], 1.25, 80)
    loads.g_nodes[-1] = 0.0
    traj = run_forward(model, loads)
    worst, p = 0.0, 0.0
    for i, g in enumerate(loads.g_nodes[:, 0]):
        u = 0.0
        if i:
            u, p = osc.step(g, p)
        sig, chi = osc.fields(u, p)
        worst = max(worst, abs(traj.u[i, 0] - u), np.abs(traj.Sigma[i, 0, 0] - sig).max(),
                    np.abs(traj.Sigma[i, 0, 1] - chi).max())
    springback = abs(traj.u[-1, 0])
    ok = worst <= 1e-9 and springback > 0
    criterion(2, "uniaxial hysteresis oracle", ok,
              f"max nodal deviation {worst:.2e} (<= 1e-9), residual displacement {springback:.4e} (> 0)")
    assert ok


def test_c03_complementarity(criterion, studies):
    worst = 0.0
    count = 0
    trajs = []
    for name in MODELS:
        study = studies[name][0]
        trajs += [(study.model, t) for t in study.solve_all() + [study.reference]]
        model = study.model
        rng = np.random.default_rng(3)
        for wf in ("ramp", "triangle", "cycle"):
            trajs.append((model, run_forward(model, LoadProgram.from_waveform(model, wf, 3.5, N=40))))
        for _ in range(10):
            g = np.cumsum(rng.standard_normal((21, model.m)), axis=0) * 1.5
            g[0] = 0.0
            trajs.append((model, run_forward(model, LoadProgram(1.0, g))))
    for model, traj in trajs:
        rep = check_complementarity(traj, model, 1e-9)
        worst = max(worst, rep.max_lambda_phi, rep.max_neg_lambda, rep.max_phi)
        count += 1
    ok = worst <= 1e-9
    criterion(3, "KKT/complementarity", ok, f"max residual {worst:.2e} over {count} trajectories (<= 1e-9)")
    assert ok


def test_c04_linf_rate(criterion, studies):
    details, ok = [], True
    total = sum(t for _, t in studies.values())
    for name in MODELS:
        rep = cv.rate_study_Linfty(studies[name][0], threshold=0.45)
        ok &= rep.order >= 0.45
        details.append(f"{name} order {rep.order:.3f}")
    ok &= total < 300.0
    criterion(4, "L-infinity rate", ok, ", ".join(details) + f" (>= 0.45), solve time {total:.1f}s (< 300)")
    assert ok


def test_c05_h1_strong_convergence(criterion, studies):
    details, ok = [], True
    for name in MODELS:
        rep = cv.h1_cauchy_study(studies[name][0], slack=0.05, ratio_limit=0.1)
        ok &= rep["monotone"] and rep["ratio_ok"] and rep["certificate_ok"]
        details.append(f"{name} ratio {rep['ratio']:.3f} monotone={rep['monotone']} "
                       f"certificate={rep['certificate_ok']}")
    criterion(5, "H1 strong convergence", ok, "; ".join(details) + " (ratio <= 0.1)")
    assert ok


def test_c06_multiplier_identity_and_convergence(criterion, studies):
    details, ok = [], True
    for name in MODELS:
        rep = cv.multiplier_study(studies[name][0], rtol=1e-10, ratio_limit=0.2)
        ok &= rep["identity_ok"] and rep["ratio_ok"]
        details.append(f"{name} identity {max(rep['identity_rel_error']):.1e} ratio {rep['ratio']:.3f}")
    criterion(6, "multiplier identity and convergence", ok,
              "; ".join(details) + " (identity <= 1e-10, ratio <= 0.2)")
    assert ok


def test_c07_holder_inequality(criterion):
    rng = np.random.default_rng(2024)
    law = isotropic_law(100.0, 150.0, 20.0, 1.0)
    exps = [1, 2, math.inf]
    details, ok = [], True
    for kind in ("interval", "ball", "vonmises"):
        worst, diss = holder_sweep(kind, 500, exps, rng, law)
        ok &= all(s >= 0 for s in worst.values()) and diss
        details.append(f"{kind} min slack " + "/".join(f"{worst[p]:.1e}" for p in exps))
    criterion(7, "play-operator Hoelder inequality", ok,
              "; ".join(details) + " over 500 pairs each, p = 1/2/inf (>= 0)")
    assert ok


def test_c08_evi_forward_equivalence(criterion):
    details, ok = [], True
    for name in MODELS:
        model = build_model(name)
        traj = run_forward(model, PLASTIC_LOADS[name].program(model, 32))
        err = reduced_equivalence_error(model, traj)
        ok &= err <= 1e-8
        details.append(f"{name} {err:.1e}")
    criterion(8, "EVI/forward equivalence", ok, ", ".join(details) + " (<= 1e-8)")
    assert ok


def test_c09_control_layer(criterion):
    start = time.perf_counter()
    # elastic regime: the limit of projected gradient against the dense QP
    model = build_model("patch2d", mu=5.0, lam=7.5, k1=1.0, sigma0=1e3)
    cp = ct.ControlProblem(model, 1.0, 6, ct.Objective("psi1", np.full(model.n, 0.5), 1.0))
    g_star, _ = elastic_control_qp(model, cp.T, cp.N, cp.objective.target, cp.objective.nu)
    res = ct.projected_gradient(cp, np.zeros_like(g_star), ct.PGOptions(tol=1e-9, fd_step=1e-4))
    d = res.g - g_star
    qp_gap = math.sqrt(ct.h1_inner(model, cp.tau, d, d))
    elastic = not run_forward(model, LoadProgram(cp.T, res.g)).lam.any()

    # plastic springback scenario
    cfg = load_config(os.path.join(SCENARIOS, "springback.json"))
    m = build_model("uniaxial", **cfg.model.parameters())
    sp = control_problem(cfg, m, cfg.load.N)
    g0 = LoadProgram.from_waveform(m, cfg.load.waveform, cfg.load.amplitude, cfg.load.T, cfg.load.N).g_nodes
    g0 = ct.project_admissible(sp.admissible, m, g0, sp.tau)
    opts = ct.PGOptions(tol=cfg.options.tol, max_iter=cfg.options.max_iter)
    pg = ct.projected_gradient(sp, g0, opts)
    values = [h["objective"] for h in pg.history]
    strict = all(b < a for a, b in zip(values, values[1:]))

    def init(t):
        return np.interp(t, sp.times, g0[:, 0])[:, None]

    approx = ct.approximation_experiment(control_problem(cfg, m, 8), (8, 16, 32), init, opts)
    elapsed = time.perf_counter() - start
    ok = (qp_gap <= 1e-6 and elastic and strict and approx["cauchy_decrease"]
          and approx["anchor_zero_steps"] and elapsed < 600)
    dist = ", ".join(f"{x:.2e}" for x in approx["successive_h1_distances"])
    criterion(9, "control layer", ok,
              f"QP gap {qp_gap:.2e} (<= 1e-6), springback {pg.steps} strictly decreasing steps={strict}, "
              f"minimizer distances [{dist}] decreasing={approx['cauchy_decrease']}, "
              f"anchored start zero steps={approx['anchor_zero_steps']}, {elapsed:.0f}s (< 600)")
    assert ok


def test_c10_determinism(criterion, tmp_path):
    configs = {
        "forward": {"experiment": "forward", "model": {"name": "patch2d"}, "load": {"N": 32}},
        "evi-check": {"experiment": "evi-check", "load": {"N": 16}, "options": {"pairs": 40}},
        "control": {"experiment": "control", "model": {"mu": 0.1, "lam": 0.15, "k1": 0.02},
                    "load": {"waveform": "triangle", "N": 8},
                    "options": {"target": 2.0, "max_iter": 20}},
    }
    identical = True
    for name, data in configs.items():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(data))
        outputs = []
        for k in range(2):
            out = tmp_path / f"{name}-{k}"
            proc = subprocess.run([sys.executable, "-m", "quasiplast.cli", "run", str(path),
                                   "--out", str(out), "--seed", "5"], capture_output=True)
            outputs.append((proc.returncode, {f: (out / f).read_bytes() for f in sorted(os.listdir(out))}))
        identical &= outputs[0] == outputs[1] and outputs[0][0] in (0, 4)
    criterion(10, "determinism", identical,
              f"repeated CLI runs bit-identical for {', '.join(configs)}: {identical}")
    assert identical
