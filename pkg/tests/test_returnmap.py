import warnings

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quasiplast import returnmap, tensor
from quasiplast.model import MaterialLaw, isotropic_law


def a_block(law):
    W = tensor.weight_matrix(law.dim)
    nc = len(W)
    A = np.zeros((2 * nc, 2 * nc))
    A[:nc, :nc] = W @ law.c_inv
    A[nc:, nc:] = W @ law.h_inv
    return 0.5 * (A + A.T)


def random_spd(rng, dim, scale):
    nc = tensor.ncomp(dim)
    W = np.diag(tensor.weights(dim))
    X = rng.standard_normal((nc, nc))
    S = X @ X.T + nc * np.eye(nc)
    # a map L with W L symmetric positive definite
    return np.linalg.solve(W, S) * scale


def conic_projection(X, law):
    """Projection onto the yield set by a generic conic solver (independent route)."""
    dim = law.dim
    nc = tensor.ncomp(dim)
    L = np.linalg.cholesky(a_block(law))
    T = cp.Variable(2 * nc)
    D = np.sqrt(tensor.weights(dim))[:, None] * tensor.dev_matrix(dim)
    cons = [cp.SOC(law.sigma0, D @ (T[:nc] + T[nc:]))]
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(L.T @ (T - X.ravel()))), cons)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return np.asarray(T.value).reshape(2, nc)


seeds = st.integers(0, 2**31 - 1)


@given(seeds, st.sampled_from([2, 3]), st.floats(0.1, 50.0))
def test_projection_is_admissible_and_idempotent(seed, dim, size):
    rng = np.random.default_rng(seed)
    law = isotropic_law(100.0, 150.0, 20.0, 1.0, dim)
    X = size * rng.standard_normal((5, 2, tensor.ncomp(dim)))
    P, gamma = returnmap.project(X, law)
    assert np.all(tensor.yield_phi(P, 1.0) <= 1e-12)
    assert np.all(gamma >= 0)
    P2, g2 = returnmap.project(P, law)
    np.testing.assert_allclose(P2, P, atol=1e-12 * (1 + np.abs(P).max()))
    inside = tensor.yield_phi(X, 1.0) <= 0
    np.testing.assert_array_equal(P[inside], X[inside])


@given(seeds)
def test_variational_characterization(seed):
    rng = np.random.default_rng(seed)
    law = isotropic_law(100.0, 150.0, 20.0, 1.0)
    A = a_block(law)
    X = 5 * rng.standard_normal((1, 2, 6))
    P, _ = returnmap.project(X, law)
    Z, _ = returnmap.project(3 * rng.standard_normal((50, 2, 6)), law)
    gaps = (Z - P).reshape(50, -1) @ A @ (X - P).ravel()
    assert gaps.max() <= 1e-10 * (1 + np.abs(X).max()) ** 2


def test_general_law_route_matches_radial_route(rng):
    iso = isotropic_law(100.0, 150.0, 20.0, 1.0)
    general = MaterialLaw(iso.c_inv, iso.h_inv, 1.0)
    X = 4 * rng.standard_normal((20, 2, 6))
    P1, g1 = returnmap.project(X, iso)
    P2, g2 = returnmap.project(X, general)
    np.testing.assert_allclose(P2, P1, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(g2, g1, rtol=1e-10, atol=1e-16)


@pytest.mark.parametrize("dim", [2, 3])
def test_anisotropic_projection_matches_conic_solver(dim, rng):
    law = MaterialLaw(random_spd(rng, dim, 0.01), random_spd(rng, dim, 0.05), 1.3)
    for _ in range(4):
        X = 3 * rng.standard_normal((1, 2, tensor.ncomp(dim)))
        P, gamma = returnmap.project(X, law)
        ref = conic_projection(X[0], law)
        # interior point solvers stop near 1e-7 relative accuracy
        np.testing.assert_allclose(P[0], ref, atol=2e-6 * (1 + np.abs(ref).max()))
        # the closed route must be at least as good: lower or equal objective
        A = a_block(law)
        dist = lambda Y: (Y - X[0]).ravel() @ A @ (Y - X[0]).ravel()
        assert dist(P[0]) <= dist(ref) * (1 + 1e-9) + 1e-14


def test_isotropic_closed_form_multiplier():
    # trial with |dd| = 3, sigma0 = 1: gamma = (3 - 1) / (2 mu + k1)
    law = isotropic_law(100.0, 150.0, 20.0, 1.0)
    d = tensor.dev(tensor.from_matrix(np.diag([1.0, -1.0, 0.0])))
    X = np.stack([3.0 * d / tensor.norm(d), np.zeros(6)])[None]
    P, gamma = returnmap.project(X, law)
    assert gamma[0] == pytest.approx(2.0 / 220.0, rel=1e-14)
    assert tensor.norm(tensor.dd(P))[0] == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("dim", [2, 3])
def test_strain_tangent_matches_finite_differences(dim, rng):
    law = MaterialLaw(random_spd(rng, dim, 0.01), random_spd(rng, dim, 0.05), 1.0)
    nc = tensor.ncomp(dim)
    prev = 0.3 * rng.standard_normal((1, 2, nc))
    prev, _ = returnmap.project(prev, law)
    deps = 0.05 * rng.standard_normal(nc)

    def state(e):
        trial = prev.copy()
        trial[0, 0] += law.c @ e
        return returnmap.project(trial, law)

    S, gamma = state(deps)
    assert gamma[0] > 0
    D = returnmap.strain_tangent(S, gamma, law)[0]
    h = 1e-7
    fd = np.stack([(state(deps + h * e)[0][0, 0] - state(deps - h * e)[0][0, 0]) / (2 * h)
                   for e in np.eye(nc)], axis=1)
    np.testing.assert_allclose(D, fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


def test_elastic_points_get_the_elastic_tangent():
    law = isotropic_law(100.0, 150.0, 20.0, 1.0)
    D = returnmap.strain_tangent(np.zeros((3, 2, 6)), np.zeros(3), law)
    np.testing.assert_allclose(D, np.broadcast_to(law.c, (3, 6, 6)))
