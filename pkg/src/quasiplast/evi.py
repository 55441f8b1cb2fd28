"""Evolution variational inequalities on closed convex sets: stop and play.

Given a closed convex set ``Z`` in ``R^k`` with an SPD inner product
``<a, b>_M = a @ M @ b``, a starting point ``x0`` in ``Z`` and a
piecewise-linear input ``u`` on a time grid, the catching-up scheme

    x_i = Proj_Z(x_{i-1} + u_i - u_{i-1})

produces the stop output ``x`` and the play output ``xi = u - x``.  Every
estimate checked here (dissipation, Hoelder continuity of the play) is a
consequence of the variational characterization of the metric projection

    <y - Proj(y), z - Proj(y)>_M <= 0   for all z in Z.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import norms, returnmap, tensor

MEMBERSHIP_TOL = 1e-9
KKT_TOL = 1e-10


class ProjectionError(RuntimeError):
    """The projection oracle failed to produce a KKT point."""


def _metric(metric, k):
    if metric is None:
        return np.eye(k)
    M = np.asarray(metric, dtype=float)
    if M.shape != (k, k):
        raise ValueError(f"metric must be {k}x{k}, got {M.shape}")
    return M


def metric_coords(values, metric):
    """Coordinates in which the ``metric`` norm of each row is Euclidean."""
    values = np.asarray(values, dtype=float)
    if metric is None:
        return values
    L = np.linalg.cholesky(np.asarray(metric, dtype=float))
    return values @ L


def metric_norm(x, metric=None):
    x = np.asarray(x, dtype=float)
    if metric is None:
        return float(np.sqrt(x @ x))
    return float(np.sqrt(max(x @ np.asarray(metric) @ x, 0.0)))


class ConvexSet:
    """Base class of projection oracles.

    Subclasses implement ``contains`` and ``project``.  ``dim`` is the length
    of the vectors the set lives in.
    """

    dim = None

    def contains(self, x, tol=MEMBERSHIP_TOL):
        raise NotImplementedError

    def project(self, x, metric=None):
        raise NotImplementedError

    def variational_gap(self, x, p, z, metric=None):
        """``<x - p, z - p>_M``; nonpositive for every ``z`` in the set when ``p`` is the projection."""
        M = _metric(metric, len(x))
        return float((np.asarray(x) - p) @ M @ (np.asarray(z) - p))


class WholeSpace(ConvexSet):
    def __init__(self, dim):
        self.dim = int(dim)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return bool(np.all(np.isfinite(x)))

    def project(self, x, metric=None):
        return np.array(x, dtype=float)


class Interval(ConvexSet):
    """The scalar interval ``[lo, hi]``; the projection is metric independent."""

    dim = 1

    def __init__(self, lo, hi):
        if not lo <= hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        self.lo, self.hi = float(lo), float(hi)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = float(np.asarray(x).reshape(-1)[0])
        return self.lo - tol <= x <= self.hi + tol

    def project(self, x, metric=None):
        return np.clip(np.asarray(x, dtype=float).reshape(1), self.lo, self.hi)


class Ball(ConvexSet):
    """Euclidean ball ``|x - center| <= radius``, projected in an arbitrary SPD metric.

    In the metric ``M`` the projection of ``y`` is ``c + (M + g I)^{-1} M (y - c)``
    with the multiplier ``g >= 0`` fixed by ``|p - c| = radius``.  In the
    eigenbasis of ``M`` this is a monotone scalar equation solved by Brent's
    method.
    """

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        self.radius = float(radius)
        self.dim = len(self.center)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return bool(np.linalg.norm(np.asarray(x) - self.center) <= self.radius + tol)

    def project(self, x, metric=None):
        y = np.asarray(x, dtype=float) - self.center
        r = self.radius
        if np.linalg.norm(y) <= r:
            return np.array(x, dtype=float)
        if r == 0:
            return self.center.copy()
        if metric is None:
            return self.center + y * (r / np.linalg.norm(y))
        lam, Q = np.linalg.eigh(_metric(metric, self.dim))
        coef = lam * (Q.T @ y)

        def excess(g):
            return np.linalg.norm(coef / (lam + g)) - r

        if excess(0.0) <= 0.0:
            # outside by a few ulps only; the radial point is within roundoff of the answer
            return self.center + y * (r / np.linalg.norm(y))
        hi = np.linalg.norm(coef) / r
        try:
            g = brentq(excess, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        except ValueError as err:
            raise ProjectionError(str(err)) from err
        p = Q @ (coef / (lam + g))
        # the secular equation pins the radius; rescale away the last ulps
        return self.center + p * (r / np.linalg.norm(p))


class VonMisesSet(ConvexSet):
    """Admissible generalized stresses at ``npts`` points, flattened.

    The natural metric is the A-inner product with unit point weights,
    in which the projection is the pointwise return map.  Other metrics are
    not supported because the projection then couples all components.
    """

    def __init__(self, law, npts=1):
        self.law = law
        self.npts = int(npts)
        self.nc = tensor.ncomp(law.dim)
        self.dim = self.npts * 2 * self.nc

    def natural_metric(self):
        W = tensor.weight_matrix(self.law.dim)
        block = np.zeros((2 * self.nc, 2 * self.nc))
        block[: self.nc, : self.nc] = W @ self.law.c_inv
        block[self.nc :, self.nc :] = W @ self.law.h_inv
        block = 0.5 * (block + block.T)
        return np.kron(np.eye(self.npts), block)

    def _field(self, x):
        return np.asarray(x, dtype=float).reshape(self.npts, 2, self.nc)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return bool(np.all(tensor.yield_phi(self._field(x), self.law.sigma0) <= tol))

    def project(self, x, metric=None):
        if metric is not None and not np.allclose(metric, self.natural_metric(), rtol=1e-12, atol=0):
            raise ValueError("the von Mises set is only projected in its natural A-metric")
        Sigma, _ = returnmap.project(self._field(x), self.law)
        return Sigma.reshape(-1)


class ReducedVonMisesSet(ConvexSet):
    """Self-equilibrated admissible stresses ``{T : phi(T) <= 0, B T = 0}`` of a model.

    The projection in the A-metric is a second-order cone program.  It is
    solved with an interior point method and then polished by Newton's
    method on the KKT system restricted to the active points, which
    recovers full double precision.
    """

    def __init__(self, model, solver="CLARABEL"):
        self.model = model
        self.dim = int(np.prod(model.field_shape))
        self.solver = solver
        self._problem = None

    def natural_metric(self):
        return self.model.a_gram

    def _b_matrix(self):
        if not hasattr(self, "_B"):
            m = self.model
            self._B = np.stack(
                [m.apply_B(e.reshape(m.field_shape)) for e in np.eye(self.dim)], axis=1
            )
        return self._B

    def contains(self, x, tol=MEMBERSHIP_TOL):
        S = np.asarray(x, dtype=float).reshape(self.model.field_shape)
        phi_ok = np.all(tensor.yield_phi(S, self.model.law.sigma0) <= tol)
        eq = np.linalg.norm(self._b_matrix() @ S.reshape(-1))
        return bool(phi_ok and eq <= tol * max(1.0, np.abs(S).max()))

    def _build(self):
        import cvxpy as cp

        m = self.model
        nc, npts = m.nc, m.npts
        L = np.linalg.cholesky(self.natural_metric())
        T = cp.Variable(self.dim)
        Y = cp.Parameter(self.dim)
        P = tensor.dev_matrix(m.dim)
        wh = np.sqrt(tensor.weights(m.dim))
        dd_rows = []
        for p in range(npts):
            row = np.zeros((nc, self.dim))
            base = p * 2 * nc
            row[:, base : base + nc] = wh[:, None] * P
            row[:, base + nc : base + 2 * nc] = wh[:, None] * P
            dd_rows.append(row)
        cons = [self._b_matrix() @ T == 0]
        cons += [cp.SOC(m.law.sigma0, D @ T) for D in dd_rows]
        prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(L.T @ (T - Y))), cons)
        self._problem = (prob, T, Y)

    def _conic_solve(self, y):
        if self._problem is None:
            self._build()
        prob, T, Y = self._problem
        Y.value = y
        opts = {}
        if self.solver == "CLARABEL":
            opts = dict(tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, max_iter=400)
        try:
            with warnings.catch_warnings():
                # inaccurate interior points are fine, the KKT polish follows
                warnings.simplefilter("ignore", UserWarning)
                prob.solve(solver=self.solver, **opts)
        except Exception as err:  # solver specific error types
            raise ProjectionError(f"conic solve failed: {err}") from err
        if T.value is None or prob.status not in ("optimal", "optimal_inaccurate"):
            raise ProjectionError(f"conic solve ended with status {prob.status}")
        return np.array(T.value)

    def _polish(self, y, T0):
        m = self.model
        nc, npts, N = m.nc, m.npts, self.dim
        sigma0 = m.law.sigma0
        A = self.natural_metric()
        B = self._b_matrix()
        n = B.shape[0]
        P = tensor.dev_matrix(m.dim)
        W = tensor.weight_matrix(m.dim)
        PWP = P.T @ W @ P
        hess_block = np.kron(np.ones((2, 2)), PWP)

        def grads(T):
            S = T.reshape(npts, 2, nc)
            s = tensor.dd(S)
            g = np.zeros((npts, N))
            for p in range(npts):
                v = P.T @ W @ s[p]
                base = p * 2 * nc
                g[p, base : base + nc] = v
                g[p, base + nc : base + 2 * nc] = v
            phi = 0.5 * (tensor.frobenius(s, s) - sigma0**2)
            return phi, g

        T = T0.copy()
        phi, _ = grads(T)
        active = phi >= 0.5 * sigma0**2 * ((1 - 1e-6) ** 2 - 1)
        for _ in range(20):
            idx = np.flatnonzero(active)
            k = len(idx)
            # multipliers from stationarity at the starting point
            phi, g = grads(T)
            Jm = np.hstack([B.T, g[idx].T])
            coef = np.linalg.lstsq(Jm, -A @ (T - y), rcond=None)[0]
            v, gam = coef[:n], coef[n:]
            for _it in range(50):
                phi, g = grads(T)
                r1 = A @ (T - y) + B.T @ v + g[idx].T @ gam
                r2 = B @ T
                r3 = phi[idx]
                res = np.concatenate([r1, r2, r3])
                H = A.copy()
                for j, p in enumerate(idx):
                    sl = slice(p * 2 * nc, (p + 1) * 2 * nc)
                    H[sl, sl] += gam[j] * hess_block
                K = np.zeros((N + n + k, N + n + k))
                K[:N, :N] = H
                K[:N, N : N + n] = B.T
                K[N : N + n, :N] = B
                K[:N, N + n :] = g[idx].T
                K[N + n :, :N] = g[idx]
                step = np.linalg.lstsq(K, -res, rcond=None)[0]
                T = T + step[:N]
                v = v + step[N : N + n]
                gam = gam + step[N + n :]
                scale = max(1.0, np.abs(A @ y).max(), sigma0**2)
                if np.abs(step[:N]).max() <= 1e-15 * max(1.0, np.abs(T).max()) or (
                    np.abs(res).max() <= 1e-15 * scale
                ):
                    break
            phi, _g = grads(T)
            neg = gam < -KKT_TOL * max(1.0, np.abs(gam).max(initial=0.0))
            viol = (~active) & (phi > KKT_TOL * sigma0**2)
            if not neg.any() and not viol.any():
                return T
            active = active.copy()
            active[idx[neg]] = False
            active[viol] = True
        raise ProjectionError("active-set polishing did not settle")

    def project(self, x, metric=None):
        if metric is not None and not np.allclose(metric, self.natural_metric(), rtol=1e-12, atol=0):
            raise ValueError("the reduced set is only projected in the model's A-metric")
        y = np.asarray(x, dtype=float).reshape(-1)
        if self.contains(y, tol=0.0):
            return y.copy()
        return self._polish(y, self._conic_solve(y))


@dataclass
class EviProblem:
    """Catching-up data: set, metric, start point and a piecewise-linear input.

    ``inputs`` has shape ``(K+1, k)``; ``times`` is strictly increasing and
    starts at 0.
    """

    set: ConvexSet
    times: np.ndarray
    inputs: np.ndarray
    x0: np.ndarray
    metric: np.ndarray = None
    tol: float = MEMBERSHIP_TOL

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.times.ndim != 1 or len(self.times) < 1 or self.times[0] != 0.0:
            raise ValueError("time grid must be one-dimensional and start at 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if len(self.inputs) != len(self.times):
            raise ValueError("one input value per grid node is required")
        if self.inputs.shape[1] != len(self.x0):
            raise ValueError("input and start point dimensions differ")
        if not self.set.contains(self.x0, self.tol):
            raise ValueError("the start point is not in the set")
        if self.metric is not None:
            np.linalg.cholesky(self.metric)


@dataclass
class EviSolution:
    times: np.ndarray
    inputs: np.ndarray
    stop: np.ndarray
    play: np.ndarray = field(init=False)

    def __post_init__(self):
        self.play = self.inputs - self.stop


def stop_step(x_prev, du, cset, metric=None):
    """One catching-up step ``Proj(x_prev + du)``; a zero increment copies ``x_prev``."""
    x_prev = np.asarray(x_prev, dtype=float)
    du = np.asarray(du, dtype=float)
    if not np.any(du):
        return x_prev.copy()
    out = np.asarray(cset.project(x_prev + du, metric), dtype=float)
    if not np.all(np.isfinite(out)):
        raise ProjectionError("projection returned non-finite values")
    return out


def solve(problem):
    x = [problem.x0.copy()]
    du = np.diff(problem.inputs, axis=0)
    for d in du:
        x.append(stop_step(x[-1], d, problem.set, problem.metric))
    return EviSolution(problem.times, problem.inputs, np.array(x))


def run_stop(problem):
    return solve(problem).stop


def run_play(problem):
    return solve(problem).play


def _coords(values, metric):
    return metric_coords(values, metric)


@dataclass
class HolderReport:
    p: float
    lhs: float
    rhs: float

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def satisfied(self):
        return self.lhs <= self.rhs

    def to_dict(self):
        return {"p": self.p, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
                "satisfied": self.satisfied}


def _same_setup(p1, p2):
    if len(p1.times) != len(p2.times) or not np.array_equal(p1.times, p2.times):
        raise ValueError("the two problems must share the time grid")
    if p1.inputs.shape != p2.inputs.shape:
        raise ValueError("the two problems must have inputs of equal shape")


def holder_check(p1, p2, p_exp=2, solutions=None):
    """Both sides of the play-operator Hoelder estimate for two inputs.

    ``|xi_1 - xi_2|_{L^inf}^2 <= 2 (|u_1'|_{L^q} + |u_2'|_{L^q}) |u_1 - u_2|_{L^p}
    + |xi_1(0) - xi_2(0)|^2`` with ``1/p + 1/q = 1``, every norm taken in the
    problem metric and evaluated exactly on the piecewise-linear interpolants.
    """
    _same_setup(p1, p2)
    s1, s2 = solutions if solutions is not None else (solve(p1), solve(p2))
    M = p1.metric
    t = p1.times
    q = norms.dual_exponent(p_exp)
    dxi = _coords(s1.play - s2.play, M)
    du = _coords(p1.inputs - p2.inputs, M)
    lhs = norms.linf(dxi) ** 2
    rate = norms.derivative_lq(t, _coords(p1.inputs, M), q) + norms.derivative_lq(
        t, _coords(p2.inputs, M), q
    )
    rhs = 2.0 * rate * norms.lp(t, du, p_exp) + float(np.sum(dxi[0] ** 2))
    return HolderReport(float(p_exp), float(lhs), float(rhs))


@dataclass
class DissipationReport:
    min_orthogonality: float
    max_play_excess: float
    max_stop_excess: float
    tol: float

    @property
    def ok(self):
        return (
            self.min_orthogonality >= -self.tol
            and self.max_play_excess <= self.tol
            and self.max_stop_excess <= self.tol
        )

    def to_dict(self):
        return {
            "min_orthogonality": self.min_orthogonality,
            "max_play_excess": self.max_play_excess,
            "max_stop_excess": self.max_stop_excess,
            "tol": self.tol,
            "ok": self.ok,
        }


def dissipation_check(problem, solution=None, tol=1e-10):
    """Discrete dissipation: ``<dxi, dx> >= 0`` and both increments bounded by ``|du|``.

    Excess values are relative to ``max(1, |du_i|)``.
    """
    sol = solution if solution is not None else solve(problem)
    M = _metric(problem.metric, problem.inputs.shape[1])
    dx = np.diff(sol.stop, axis=0)
    dxi = np.diff(sol.play, axis=0)
    du = np.diff(sol.inputs, axis=0)
    if len(du) == 0:
        return DissipationReport(0.0, 0.0, 0.0, tol)
    size = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", du, M, du), 0.0))
    scale = np.maximum(1.0, size) ** 2
    orth = np.einsum("ij,jk,ik->i", dxi, M, dx) / scale
    nxi = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", dxi, M, dxi), 0.0))
    nx = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", dx, M, dx), 0.0))
    denom = np.maximum(1.0, size)
    return DissipationReport(
        float(orth.min()),
        float(np.max((nxi - size) / denom)),
        float(np.max((nx - size) / denom)),
        tol,
    )


def lipschitz_ratio(p1, p2, solutions=None):
    """Observed ``|x_1 - x_2|_{L^inf} / |u_1 - u_2|_{W^{1,1}}`` (with the start gap added)."""
    _same_setup(p1, p2)
    s1, s2 = solutions if solutions is not None else (solve(p1), solve(p2))
    M = p1.metric
    num = norms.linf(_coords(s1.stop - s2.stop, M))
    den = norms.w11(p1.times, _coords(p1.inputs - p2.inputs, M)) + metric_norm(p1.x0 - p2.x0, M)
    return float(num / den) if den > 0 else (0.0 if num == 0 else np.inf)



def reduced_evi_problem(model, times, ell):
    """The stress problem of a model as an EVI on the self-equilibrated admissible set.

    With ``x = Sigma - Sigma_ell`` and input ``-Sigma_ell`` the catching-up
    step is ``Sigma_i = argmin {|T - Sigma_{i-1}|_A : T in K, B T = ell_i}``,
    because ``Sigma_ell`` has no deviatoric coupling and shifts ``K`` onto itself.
    """
    ell = np.asarray(ell, dtype=float)
    lifts = np.array([model.sigma_of_ell(e).reshape(-1) for e in ell])
    cset = ReducedVonMisesSet(model)
    if np.any(ell[0]):
        raise ValueError("the reduced problem starts from the unloaded state")
    return EviProblem(cset, times, -lifts, -lifts[0], cset.natural_metric())


def stresses_from_reduced(model, problem, solution=None):
    """Generalized stresses ``Sigma_i = x_i + Sigma_ell_i`` of the reduced EVI."""
    sol = solution if solution is not None else solve(problem)
    return (sol.stop - problem.inputs).reshape((-1,) + model.field_shape)
