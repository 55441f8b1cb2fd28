"""Time-discrete quasistatic plasticity with linear kinematic hardening.

Each time step is a static problem: ``Sigma_i`` is the A-metric projection
of ``Sigma_{i-1}`` onto ``{T : yield_phi(T_p) <= 0 for all p, B T = ell_i}``
and ``u_i`` is the multiplier of the equilibrium constraint.  The step is
solved displacement-driven: for a trial ``u`` every point is projected in
closed form (:mod:`quasiplast.returnmap`) and the equilibrium residual
``R(u) = B Sigma(u) - ell_i`` is driven to zero by semismooth Newton with a
residual line search, falling back to the elastic-stiffness fixed point.
"""

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import norms, returnmap, tensor

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Outer iteration failed; carries the residual history."""

    def __init__(self, message, history=(), step=None):
        super().__init__(message)
        self.history = list(history)
        self.step = step


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 200
    max_failed_line_searches: int = 3
    drift_tol: float = 1e-12


WAVEFORMS = {
    "ramp": lambda s: s,
    "triangle": lambda s: 1.0 - np.abs(2.0 * s - 1.0),
    "cycle": lambda s: np.sin(2.0 * np.pi * s),
}


@dataclass
class LoadProgram:
    """Control nodes ``g_i`` on the uniform grid ``t_i = i T / N`` with ``g_0 = 0``."""

    T: float
    g_nodes: np.ndarray

    def __post_init__(self):
        self.g_nodes = np.atleast_2d(np.asarray(self.g_nodes, dtype=float))
        if not self.T > 0:
            raise ValueError("final time must be positive")
        if self.N < 1:
            raise ValueError("a load program needs at least one step")
        if np.any(self.g_nodes[0] != 0.0):
            raise ValueError("loads must start from zero (g_0 = 0)")

    @property
    def N(self):
        return len(self.g_nodes) - 1

    @property
    def tau(self):
        return self.T / self.N

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.N + 1)

    @classmethod
    def from_function(cls, fn, T, N):
        """Sample ``g(t)`` pointwise on the uniform grid."""
        t = np.linspace(0.0, T, N + 1)
        g = np.array([np.atleast_1d(fn(ti)) for ti in t], dtype=float)
        g[0] = 0.0
        return cls(T, g)

    @classmethod
    def from_waveform(cls, model, waveform, amplitude, T=1.0, N=64):
        try:
            shape = WAVEFORMS[waveform]
        except KeyError:
            raise KeyError(f"unknown waveform {waveform!r}; known: {sorted(WAVEFORMS)}") from None
        direction = model.load_direction
        return cls.from_function(lambda t: amplitude * shape(t / T) * direction, T, N)


@dataclass
class StepResult:
    Sigma: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    iterations: int
    history: list
    fixed_point_steps: int = 0


def _state(model, Sigma_prev, u_prev, u):
    trial = Sigma_prev.copy()
    trial[:, 0] += model.strain_of(u - u_prev) @ model.law.c.T
    return returnmap.project(trial, model.law)


def _jacobian(model, Sigma, gamma):
    D = returnmap.strain_tangent(Sigma, gamma, model.law)
    Bp = model.strain.reshape(model.npts, model.nc, model.n)
    WD = tensor.weight_matrix(model.dim)[None] @ D
    J = -np.einsum("pai,p,pab,pbj->ij", Bp, model.weights, WD, Bp)
    return 0.5 * (J + J.T)


def solve_step(model, Sigma_prev, u_prev, ell, tau=1.0, opts=None):
    """One implicit step from ``(Sigma_prev, u_prev)`` to the load ``ell``.

    Returns the minimizer of ``1/2 |T - Sigma_prev|_A^2`` over the admissible
    stresses in equilibrium with ``ell``, the displacement certifying
    stationarity, and the multiplier ``lam = gamma / tau``.
    """
    opts = opts or SolverOptions()
    Sigma_prev = model.check_field(Sigma_prev)
    u_prev = np.asarray(u_prev, dtype=float)
    ell = np.asarray(ell, dtype=float)
    scale = max(1.0, float(np.linalg.norm(ell)))

    u = u_prev.copy()
    Sigma, gamma = _state(model, Sigma_prev, u_prev, u)
    R = model.apply_B(Sigma) - ell
    res = float(np.linalg.norm(R))
    history = [res]
    failed = 0
    fixed_steps = 0
    it = 0
    while res > opts.tol * scale:
        if it >= opts.max_iter:
            raise SolverError(
                f"no convergence after {it} iterations (residual {res:.3e})", history
            )
        it += 1
        accepted = False
        if failed < opts.max_failed_line_searches:
            du = -np.linalg.solve(_jacobian(model, Sigma, gamma), R)
            alpha = 1.0
            for _ in range(30):
                cand = u + alpha * du
                S_c, g_c = _state(model, Sigma_prev, u_prev, cand)
                R_c = model.apply_B(S_c) - ell
                r_c = float(np.linalg.norm(R_c))
                if r_c <= (1.0 - 1e-4 * alpha) * res:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                failed += 1
                log.debug("line search failed (%d)", failed)
        if not accepted:
            cand = u + linalg.cho_solve(model._stiffness_cho, R)
            S_c, g_c = _state(model, Sigma_prev, u_prev, cand)
            R_c = model.apply_B(S_c) - ell
            r_c = float(np.linalg.norm(R_c))
            fixed_steps += 1
        u, Sigma, gamma, R, res = cand, S_c, g_c, R_c, r_c
        history.append(res)

    if it and res > 0:
        # one polishing step, kept only if it helps
        cand = u - np.linalg.solve(_jacobian(model, Sigma, gamma), R)
        S_c, g_c = _state(model, Sigma_prev, u_prev, cand)
        R_c = model.apply_B(S_c) - ell
        if np.linalg.norm(R_c) < res:
            u, Sigma, gamma, R, res = cand, S_c, g_c, R_c, float(np.linalg.norm(R_c))

    phi = tensor.yield_phi(Sigma, model.law.sigma0)
    drift = phi > opts.drift_tol * model.law.sigma0**2
    if drift.any():
        log.info("re-projecting %d points with yield value up to %.3e", drift.sum(), phi.max())
        s = tensor.dd(Sigma[drift])
        shrink = 1.0 - model.law.sigma0 / tensor.norm(s)
        Sigma[drift, 1] -= shrink[:, None] * s
    return StepResult(Sigma, u, gamma / tau, gamma, it, history, fixed_steps)


def recover_multiplier(model, Sigma_i, Sigma_prev, tau):
    """``lam_p = |H^{-1} (chi_i - chi_prev)_p| / (tau sigma0)``."""
    dchi = model.check_field(Sigma_i)[:, 1] - model.check_field(Sigma_prev)[:, 1]
    return tensor.norm(dchi @ model.law.h_inv.T) / (tau * model.law.sigma0)


@dataclass
class Trajectory:
    """Nodal states on a uniform grid plus the per-cell multiplier."""

    times: np.ndarray
    g: np.ndarray
    ell: np.ndarray
    Sigma: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    iterations: list = field(default_factory=list)

    @property
    def N(self):
        return len(self.times) - 1

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def tau(self):
        return self.T / self.N

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "g": self.g.tolist(),
            "ell": self.ell.tolist(),
            "Sigma": self.Sigma.tolist(),
            "u": self.u.tolist(),
            "lam": self.lam.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    def csv_rows(self, model):
        """Per-node scalars: time, |Sigma|_A, |u|_V, max lambda, max phi."""
        sa = np.linalg.norm(model.sigma_coords(self.Sigma), axis=1)
        un = np.linalg.norm(model.u_coords(self.u), axis=1)
        lam = np.concatenate([[0.0], self.lam.max(axis=1)])
        phi = tensor.yield_phi(self.Sigma, model.law.sigma0).max(axis=1)
        return [
            (float(t), float(a), float(b), float(c), float(d))
            for t, a, b, c, d in zip(self.times, sa, un, lam, phi)
        ]

    def to_csv(self, model):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "sigma_norm_A", "u_norm_V", "max_lambda", "max_phi"])
        for row in self.csv_rows(model):
            w.writerow([format(x, ".17g") for x in row])
        return buf.getvalue()


def run_forward(model, loads, opts=None):
    """Sequential implicit steps from the unloaded state ``(0, 0)``."""
    opts = opts or SolverOptions()
    N, tau = loads.N, loads.tau
    ell = np.array([model.load(g) for g in loads.g_nodes])
    Sigma = np.zeros((N + 1,) + model.field_shape)
    u = np.zeros((N + 1, model.n))
    lam = np.zeros((N, model.npts))
    gamma = np.zeros((N, model.npts))
    iterations = []
    for i in range(1, N + 1):
        if np.array_equal(ell[i], ell[i - 1]):
            Sigma[i], u[i] = Sigma[i - 1], u[i - 1]
            iterations.append(0)
            continue
        try:
            step = solve_step(model, Sigma[i - 1], u[i - 1], ell[i], tau, opts)
        except SolverError as exc:
            exc.step = i
            raise SolverError(f"step {i}: {exc}", exc.history, step=i) from exc
        Sigma[i], u[i], lam[i - 1], gamma[i - 1] = step.Sigma, step.u, step.lam, step.gamma
        iterations.append(step.iterations)
    return Trajectory(loads.times, loads.g_nodes.copy(), ell, Sigma, u, lam, gamma, iterations)


def interpolate(traj, t):
    """Linear interpolants of ``Sigma``, ``u`` and the cell value of ``lambda`` at ``t``."""
    if not 0.0 <= t <= traj.T:
        raise ValueError(f"t = {t} outside [0, {traj.T}]")
    times = traj.times
    i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, traj.N - 1))
    theta = (t - times[i]) / (times[i + 1] - times[i])
    if t == times[i]:
        S, u = traj.Sigma[i], traj.u[i]
    elif t == times[i + 1]:
        S, u = traj.Sigma[i + 1], traj.u[i + 1]
    else:
        S = (1 - theta) * traj.Sigma[i] + theta * traj.Sigma[i + 1]
        u = (1 - theta) * traj.u[i] + theta * traj.u[i + 1]
    return S.copy(), u.copy(), traj.lam[i].copy()


@dataclass
class ComplementarityReport:
    max_neg_lambda: float
    max_phi: float
    max_lambda_phi: float
    tol: float

    @property
    def ok(self):
        return max(self.max_neg_lambda, self.max_phi, self.max_lambda_phi) <= self.tol


def check_complementarity(traj, model, tol=1e-9):
    """Worst residuals of ``0 <= lambda  _|_  phi(Sigma) <= 0`` over cells and points."""
    phi = tensor.yield_phi(traj.Sigma[1:], model.law.sigma0)
    lam = traj.lam
    return ComplementarityReport(
        max_neg_lambda=float(max(0.0, (-lam).max(initial=0.0))),
        max_phi=float(max(0.0, phi.max(initial=0.0))),
        max_lambda_phi=float(np.abs(lam * phi).max(initial=0.0)),
        tol=tol,
    )


def kinematic_residual(traj, model):
    """Max over nodes/points of ``|C^{-1} sigma - eps(u) - H^{-1} chi|``."""
    law = model.law
    eps = (traj.u @ model.strain.T).reshape(len(traj.u), model.npts, model.nc)
    r = traj.Sigma[:, :, 0] @ law.c_inv.T - eps - traj.Sigma[:, :, 1] @ law.h_inv.T
    return float(tensor.norm(r).max())


def equilibrium_residual(traj, model):
    res = [np.linalg.norm(model.apply_B(S) - l) for S, l in zip(traj.Sigma, traj.ell)]
    return float(max(res))


def energy_identity_residual(traj, model):
    """``1/2 |Sigma_N|_A^2 - (sum <A dS_i, S_i> - 1/2 sum |dS_i|_A^2)``, relative."""
    X = model.sigma_coords(traj.Sigma)
    dX = np.diff(X, axis=0)
    lhs = 0.5 * np.sum(X[-1] ** 2)
    rhs = np.sum(dX * X[1:]) - 0.5 * np.sum(dX**2)
    return float(abs(lhs - rhs) / max(lhs, 1e-300)) if lhs > 0 else float(abs(rhs))


def a_priori_ratio(traj, model):
    """``(|Sigma|_{H^1} + |u|_{H^1}) / |ell|_{H^1}`` with the zero-start H^1 norms."""
    t = traj.times
    num = norms.h1(t, model.sigma_coords(traj.Sigma)) + norms.h1(t, model.u_coords(traj.u))
    den = norms.h1(t, model.ell_coords(traj.ell))
    return float(num / den) if den > 0 else 0.0


def forward_report(traj, model, tol=1e-9):
    """Named invariant checks of a solved trajectory."""
    comp = check_complementarity(traj, model, tol)
    kin = kinematic_residual(traj, model)
    eq = equilibrium_residual(traj, model)
    energy = energy_identity_residual(traj, model)
    scale = max(1.0, float(np.abs(traj.ell).max()))
    stress_scale = max(model.law.sigma0, float(np.abs(traj.Sigma).max()))
    strain_scale = stress_scale * max(np.abs(model.law.c_inv).max(), np.abs(model.law.h_inv).max())
    return {
        "complementarity_max_neg_lambda": comp.max_neg_lambda,
        "complementarity_max_phi": comp.max_phi,
        "complementarity_max_lambda_phi": comp.max_lambda_phi,
        "complementarity_ok": comp.ok,
        "kinematic_identity_residual": kin,
        "kinematic_identity_ok": kin <= tol * max(1.0, strain_scale),
        "equilibrium_residual": eq,
        "equilibrium_ok": eq <= tol * scale,
        "energy_identity_rel_residual": energy,
        "energy_identity_ok": energy <= 1e-10,
        "a_priori_ratio": a_priori_ratio(traj, model),
        "newton_iterations_max": max(traj.iterations, default=0),
    }
