import numpy as np
import pytest

from quasiplast import convergence as cv
from quasiplast.forward import LoadProgram, Trajectory, run_forward
from quasiplast.model import build_model


def scalar_traj(times, values):
    times = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    n = len(times)
    Sigma = v[:, None, None, None] * np.ones((n, 1, 1, 1))
    return Trajectory(times, np.zeros((n, 1)), np.zeros((n, 1)), Sigma, v[:, None],
                      np.zeros((n - 1, 1)), np.zeros((n - 1, 1)), [0] * (n - 1))


def test_compare_with_itself_is_zero(uniaxial):
    traj = run_forward(uniaxial, LoadProgram.from_waveform(uniaxial, "cycle", 3.0, N=8))
    assert all(v == 0.0 for v in cv.compare(traj, traj, uniaxial).values())


def test_constant_versus_zero():
    c = 1.75
    out = cv.compare(scalar_traj([0, 0.5, 1], [c] * 3), scalar_traj([0, 1], [0, 0]))
    assert out["Sigma_Linf"] == c and out["u_Linf"] == c
    assert out["Sigma_L2"] == pytest.approx(c, abs=1e-14)
    assert out["u_L2"] == pytest.approx(c, abs=1e-14)


def test_ramp_versus_two_node_ramp():
    out = cv.compare(scalar_traj(np.linspace(0, 1, 9), np.linspace(0, 2, 9)), scalar_traj([0, 1], [0, 2]))
    assert all(v == pytest.approx(0.0, abs=1e-15) for v in out.values())


def test_mismatched_final_times():
    with pytest.raises(ValueError):
        cv.compare(scalar_traj([0, 1], [0, 1]), scalar_traj([0, 2], [0, 1]))


def test_study_validation(uniaxial):
    load = cv.LoadSpec("cycle", 3.0)
    with pytest.raises(ValueError):
        cv.RefinementStudy(uniaxial, load, steps=(16, 8), reference_steps=32)
    with pytest.raises(ValueError):
        cv.RefinementStudy(uniaxial, load, steps=(8, 12), reference_steps=48)
    with pytest.raises(KeyError):
        cv.LoadSpec("square", 1.0)


def test_fitted_order_recovers_power_law():
    taus = 2.0 ** -np.arange(3, 9)
    errs = 3.0 * taus**0.7
    assert cv.fitted_order(taus, errs) == pytest.approx(0.7, abs=1e-12)
    np.testing.assert_allclose(cv.pairwise_orders(taus, errs), 0.7, atol=1e-12)


@pytest.mark.parametrize("name", ["uniaxial", "patch2d"])
def test_elastic_study_is_exact(name):
    model = build_model(name)
    # a piecewise-linear load with its kink on every grid: interpolants coincide
    study = cv.RefinementStudy(model, cv.LoadSpec("triangle", 0.3), steps=(8, 16, 32), reference_steps=64)
    rep = cv.rate_study_Linfty(study)
    assert rep.passed and np.all(rep.errors <= 1e-12)
    h1 = cv.h1_cauchy_study(study)
    assert max(h1["sigma_h1"]) <= 1e-11 and h1["certificate_ok"]
    lam = cv.multiplier_study(study)
    assert all(a == 0.0 and b == 0.0 for a, b in lam["identity"])


def test_uniaxial_plastic_rates():
    model = build_model("uniaxial")
    study = cv.RefinementStudy(model, cv.LoadSpec("cycle", 3.0))
    rep = cv.rate_study_Linfty(study)
    assert 0.5 <= rep.order <= 1.5
    h1 = cv.h1_cauchy_study(study)
    assert h1["monotone"] and h1["ratio_ok"] and h1["certificate_ok"]
    lam = cv.multiplier_study(study)
    assert max(lam["identity_rel_error"]) <= 1e-12
    assert lam["ratio_ok"]
    # the multiplier error roughly halves per halving of tau or better on average
    assert np.mean(lam["orders"]) >= 0.5


@pytest.mark.xfail(strict=True, reason="H1 error decays at order ~1/2 to 1; 64x refinement gives ~0.026, not 1e-3")
def test_uniaxial_h1_error_below_one_thousandth_of_coarsest():
    study = cv.RefinementStudy(build_model("uniaxial"), cv.LoadSpec("cycle", 3.0))
    assert cv.h1_cauchy_study(study)["ratio"] < 1e-3


def test_certificate_on_patch2d_runs(patch):
    for N in (8, 32):
        traj = run_forward(patch, cv.LoadSpec("cycle", 2.5).program(patch, N))
        margins = cv.cell_certificate(patch, traj)
        assert margins.min() >= -1e-10 * max(1.0, np.abs(margins).max())


def test_multiplier_identity_on_patch2d(patch):
    traj = run_forward(patch, cv.LoadSpec("triangle", 2.5).program(patch, 16))
    lhs, rhs = cv.multiplier_identity(patch, traj)
    assert lhs > 0
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_weak_convergence_probe(uniaxial):
    load = cv.LoadSpec("cycle", 3.0)
    rows = cv.weak_convergence_probe(uniaxial, load, 0.0, steps=(8, 16))
    assert all(r["sigma_observable_gap"] == 0 and r["u_observable_gap"] == 0 for r in rows)
    rows = cv.weak_convergence_probe(uniaxial, load, 2.0, steps=(16, 64, 256))
    gaps = [r["sigma_observable_gap"] + r["u_observable_gap"] for r in rows]
    assert gaps[0] > gaps[1] > gaps[2]
    # the oscillation adds about a^2 / 1 to |g'|^2 and does not fade
    excess = [r["load_rate_l2"] - r["base_load_rate_l2"] for r in rows]
    assert min(excess) > 0.1 * max(excess) > 0


def test_stability_ratios_are_finite(patch):
    rep = cv.stability_ratios(patch, N=12, pairs=4)
    assert len(rep["holder_ratios"]) == 4
    assert np.isfinite(rep["holder_max"]) and np.isfinite(rep["lipschitz_max"])
    assert rep["lipschitz_max"] > 0


def test_parallel_pool_matches_serial(uniaxial):
    load = cv.LoadSpec("cycle", 3.0)
    a = cv.RefinementStudy(uniaxial, load, steps=(8, 16), reference_steps=32, jobs=1).solve_all()
    b = cv.RefinementStudy(uniaxial, load, steps=(8, 16), reference_steps=32, jobs=2).solve_all()
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.Sigma, y.Sigma)


def test_csv_rows_round_trip():
    text = cv.to_csv([["tau", "error"], [0.125, 1 / 3]])
    assert text.splitlines()[1] == "0.125,0.33333333333333331"
