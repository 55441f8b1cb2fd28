import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quasiplast import control as ct
from quasiplast.forward import LoadProgram, run_forward
from quasiplast.model import build_model

from oracles import elastic_control_qp

ELASTIC = dict(mu=5.0, lam=7.5, k1=1.0, sigma0=1e3)


def elastic_problem(name="patch2d", N=6, nu=1.0, target=0.5):
    model = build_model(name, **ELASTIC)
    obj = ct.Objective("psi1", np.full(model.n, target), nu)
    return ct.ControlProblem(model, 1.0, N, obj, ct.AdmissibleSet("U2"))


def h1_distance(cp, a, b):
    d = np.asarray(a) - np.asarray(b)
    return np.sqrt(ct.h1_inner(cp.model, cp.tau, d, d))


# objectives

def test_psi_values_by_hand(uniaxial):
    traj = run_forward(uniaxial, LoadProgram(1.0, [[0.0], [1.0]]))
    u1 = traj.u[-1, 0]
    # psi1 with target 0 on one cell: 1/2 int_0^1 (s u1)^2 ds = u1^2 / 6
    assert ct.Objective("psi1", [0.0], 1.0).tracking(uniaxial, traj) == pytest.approx(u1**2 / 6, rel=1e-14)
    assert ct.Objective("psi2", [0.5], 1.0).tracking(uniaxial, traj) == pytest.approx(0.5 * (u1 - 0.5) ** 2)
    target = np.zeros((1, 6))
    eps = uniaxial.strain_of(traj.u[-1])
    psi3 = ct.Objective("psi3", target, 1.0).tracking(uniaxial, traj)
    assert psi3 == pytest.approx(0.5 * eps[0, 0] ** 2, rel=1e-14)


def test_objective_validation(uniaxial):
    with pytest.raises(ValueError):
        ct.Objective("psi4", [0.0], 1.0)
    with pytest.raises(ValueError):
        ct.Objective("psi2", [0.0], 0.0)
    with pytest.raises(ValueError):
        ct.ControlProblem(uniaxial, 1.0, 4, ct.Objective("psi3", [0.0], 1.0))
    with pytest.raises(ValueError):
        ct.AdmissibleSet("U1")


def test_reduced_objective_rejects_bad_controls(uniaxial):
    cp = ct.ControlProblem(uniaxial, 1.0, 2, ct.Objective("psi2", [0.0], 1.0))
    with pytest.raises(ValueError):
        ct.reduced_objective(cp, [[0.0], [1.0]])
    with pytest.raises(ValueError):
        ct.reduced_objective(cp, [[1.0], [1.0], [0.0]])


# metric and projections

def test_time_gram_matches_h1_norm(patch, rng):
    N, tau = 5, 0.2
    g = rng.standard_normal((N + 1, patch.m))
    t = np.linspace(0, 1, N + 1)
    assert ct.h1_inner(patch, tau, g, g) == pytest.approx(ct.h1_norm(patch, t, g) ** 2, rel=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_u2_projection_matches_constrained_least_squares(seed):
    rng = np.random.default_rng(seed)
    model = build_model("patch2d")
    N = int(rng.integers(2, 9))
    tau = 1.0 / N
    g = rng.standard_normal((N + 1, model.m))
    p = ct.project_admissible(ct.AdmissibleSet("U2"), model, g, tau)
    # dense KKT: min (x - g)^T G (x - g) s.t. x_0 = x_N = 0, per control coordinate
    G = ct.time_gram(N, tau)
    C = np.zeros((2, N + 1))
    C[0, 0] = C[1, N] = 1.0
    KKT = np.block([[G, C.T], [C, np.zeros((2, 2))]])
    ref = np.linalg.solve(KKT, np.vstack([G @ g, np.zeros((2, model.m))]))[: N + 1]
    np.testing.assert_allclose(p, ref, atol=1e-10 * (1 + np.abs(g).max()))
    assert ct.AdmissibleSet("U2").contains(model, p)


def test_u1_projection(patch, rng):
    g = 5 * rng.standard_normal((5, patch.m))
    aset = ct.AdmissibleSet("U1", rho=1.0)
    p = ct.project_admissible(aset, patch, g)
    assert aset.contains(patch, p) and not aset.exact_projection
    assert not ct.project_admissible(ct.AdmissibleSet("U1", rho=0.0), patch, g).any()
    # nodes already inside are untouched
    small = 1e-3 * g
    small[0] = 0
    np.testing.assert_array_equal(ct.project_admissible(aset, patch, small), small)


# gradients

def test_fd_gradient_matches_quadratic_oracle():
    cp = elastic_problem()
    g_star, H = elastic_control_qp(cp.model, cp.T, cp.N, cp.objective.target, cp.objective.nu)
    rng = np.random.default_rng(1)
    g = ct.project_admissible(cp.admissible, cp.model, 0.3 * rng.standard_normal(g_star.shape), cp.tau)
    rep = ct.fd_gradient(cp, g, h=1e-4)
    free = np.arange(1, cp.N)
    euclid = H @ (g[free] - g_star[free]).ravel()
    G = np.kron(ct.time_gram(cp.N, cp.tau)[np.ix_(free, free)], np.diag(cp.model.control_weights))
    ref = np.linalg.solve(G, euclid).reshape(len(free), -1)
    np.testing.assert_allclose(rep[free], ref, atol=1e-8 * np.abs(ref).max())
    assert not rep[[0, -1]].any()


def test_tikhonov_representative_is_nu_times_control():
    # with a target equal to zero and zero displacement response the gradient is nu * g
    model = build_model("uniaxial", **ELASTIC)
    cp = ct.ControlProblem(model, 1.0, 4, ct.Objective("psi2", [0.0], 0.3))
    g = np.array([[0.0], [0.2], [-0.1], [0.4], [0.0]])
    # psi2 sees u_N = 0 under U2, so only the Tikhonov term contributes
    rep = ct.fd_gradient(cp, g, h=1e-4)
    np.testing.assert_allclose(rep, 0.3 * g, atol=1e-9)


def test_prox_term_adds_the_gram_matrix():
    cp = elastic_problem(N=4)
    g_star, H = elastic_control_qp(cp.model, cp.T, cp.N, cp.objective.target, cp.objective.nu)
    anchor = np.zeros_like(g_star)
    anchored = cp.with_anchor(cp.times, anchor)
    rng = np.random.default_rng(2)
    g = ct.project_admissible(cp.admissible, cp.model, rng.standard_normal(g_star.shape), cp.tau)
    diff = ct.fd_gradient(anchored, g, h=1e-4) - ct.fd_gradient(cp, g, h=1e-4)
    # the representative of 1/2 |g - anchor|^2_H1 is g - anchor
    np.testing.assert_allclose(diff, g - anchor, atol=1e-8)


# projected gradient

@pytest.mark.parametrize("name", ["uniaxial", "patch2d"])
def test_projected_gradient_reaches_the_qp_minimizer(name):
    cp = elastic_problem(name)
    g_star, _ = elastic_control_qp(cp.model, cp.T, cp.N, cp.objective.target, cp.objective.nu)
    res = ct.projected_gradient(cp, np.zeros_like(g_star), ct.PGOptions(tol=1e-9, fd_step=1e-4))
    assert res.status == "converged"
    traj = run_forward(cp.model, LoadProgram(cp.T, res.g))
    assert not traj.lam.any()
    assert h1_distance(cp, res.g, g_star) <= 1e-6
    values = [h["objective"] for h in res.history]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert cp.admissible.contains(cp.model, res.g)


def test_start_at_minimizer_takes_no_steps():
    cp = elastic_problem("uniaxial")
    g_star, _ = elastic_control_qp(cp.model, cp.T, cp.N, cp.objective.target, cp.objective.nu)
    res = ct.projected_gradient(cp, g_star, ct.PGOptions(tol=1e-8, fd_step=1e-4))
    assert res.status == "converged" and res.steps == 0


def test_optimal_value_decreases_with_nu():
    values = []
    for nu in (1.0, 0.3, 0.1):
        cp = elastic_problem("uniaxial", nu=nu)
        g_star, _ = elastic_control_qp(cp.model, cp.T, cp.N, cp.objective.target, nu)
        values.append(ct.reduced_objective(cp, g_star))
    assert values[0] > values[1] > values[2]


def test_inadmissible_start_is_rejected():
    cp = elastic_problem("uniaxial")
    g = np.zeros((cp.N + 1, 1))
    g[-1] = 1.0
    with pytest.raises(ValueError):
        ct.projected_gradient(cp, g)


def test_plastic_springback_descent():
    model = build_model("uniaxial", mu=0.1, lam=0.15, k1=0.02, sigma0=1.0)
    cp = ct.ControlProblem(model, 1.0, 16, ct.Objective("psi2", [2.0], 1e-7))
    g0 = LoadProgram.from_waveform(model, "triangle", 3.0, N=16).g_nodes
    res = ct.projected_gradient(cp, g0, ct.PGOptions(tol=1e-6, max_iter=40))
    values = [h["objective"] for h in res.history]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-3 * values[0]
    rows = res.to_csv().splitlines()
    assert rows[0] == "iteration,objective,gradient_norm,step,step_norm"
    assert len(rows) == len(res.history) + 1
