"""Pointwise projection onto the von Mises set in the A-metric.

For a trial generalized stress ``X = (x_sigma, x_chi)`` at one material
point the projection solves

    min 1/2 |T - X|_A^2   subject to   |dev(tau) + dev(mu)| <= sigma0,

whose optimality system is ``T = X - gamma (C s, H s)`` with
``s = dd(T)`` and ``gamma >= 0`` complementary to the constraint.  Hence
``s = (I + gamma M)^{-1} dd(X)`` with ``M = P (C + H) P`` restricted to
deviators.  For isotropic laws ``M`` is a multiple of the identity on
deviators and ``gamma`` is explicit; otherwise ``gamma`` is found by
bisection on the scalar equation ``|s(gamma)| = sigma0``.
"""

import numpy as np

from . import tensor

BISECTION_STEPS = 200


def _dev_coupling(law):
    P = tensor.dev_matrix(law.dim)
    return P @ (law.c + law.h) @ P


def _secular_gamma(s_tr, law):
    """Solve ``|(I + gamma M)^{-1} s_tr| = sigma0`` for each row by bisection."""
    dim = law.dim
    M = _dev_coupling(law)
    wh = np.sqrt(tensor.weights(dim))
    sym = (wh[:, None] * M) / wh[None, :]
    lam, Q = np.linalg.eigh(0.5 * (sym + sym.T))
    lam = np.clip(lam, 0.0, None)
    coef = (s_tr * wh) @ Q
    sigma0 = law.sigma0

    def size(g):
        return np.sqrt(np.sum((coef / (1.0 + g[:, None] * lam)) ** 2, axis=1))

    lo = np.zeros(len(s_tr))
    hi = np.full(len(s_tr), 1.0 / max(lam.max(), 1e-300))
    for _ in range(2000):
        over = size(hi) > sigma0
        if not over.any():
            break
        hi = np.where(over, 2.0 * hi, hi)
    else:
        raise RuntimeError("could not bracket the plastic multiplier")
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi)):
            break
        big = size(mid) > sigma0
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
    return 0.5 * (lo + hi)


def project(trial, law):
    """Project generalized stresses of shape ``(npts, 2, nc)`` onto the yield set.

    Returns ``(Sigma, gamma)`` where ``gamma >= 0`` is the (time-step scaled)
    plastic multiplier per point.
    """
    trial = np.asarray(trial, dtype=float)
    s_tr = tensor.dd(trial)
    size = tensor.norm(s_tr)
    active = size > law.sigma0
    gamma = np.zeros(len(trial))
    out = trial.copy()
    if not active.any():
        return out, gamma
    sa = s_tr[active]
    if law.radial_modulus is not None:
        g = (size[active] / law.sigma0 - 1.0) / law.radial_modulus
        s = sa * (law.sigma0 / size[active])[:, None]
    else:
        g = _secular_gamma(sa, law)
        M = _dev_coupling(law)
        eye = np.eye(len(M))
        s = np.stack([np.linalg.solve(eye + gi * M, si) for gi, si in zip(g, sa)])
    gamma[active] = g
    out[active, 0] -= g[:, None] * (s @ law.c.T)
    out[active, 1] -= g[:, None] * (s @ law.h.T)
    return out, gamma


def strain_tangent(Sigma, gamma, law):
    """Derivative of the projected stress with respect to the strain increment.

    The trial state is ``(sigma_prev + C d_eps, chi_prev)``.  Returns an array
    of shape ``(npts, nc, nc)`` mapping strain-increment components to stress
    components.
    """
    dim = law.dim
    C = law.c
    npts = len(gamma)
    D = np.broadcast_to(C, (npts,) + C.shape).copy()
    active = gamma > 0
    if not active.any():
        return D
    W = tensor.weight_matrix(dim)
    P = tensor.dev_matrix(dim)
    M = _dev_coupling(law)
    eye = np.eye(len(M))
    PC = P @ C
    for p in np.flatnonzero(active):
        s = tensor.dd(Sigma[p])
        G = np.linalg.inv(eye + gamma[p] * M)
        den = s @ W @ G @ M @ s
        r = (s @ W @ G @ PC) / den
        Ds = G @ PC - np.outer(G @ M @ s, r)
        D[p] = C - C @ (np.outer(s, r) + gamma[p] * Ds)
    return D
