"""Optimal control of the time-discrete forward problem over boundary loads.

Controls are nodal load trajectories ``g`` of shape ``(N+1, m)`` on a uniform
grid with ``g_0 = 0``.  The control space carries the discrete H1 norm
``|g(0)|_U^2 + |g'|_{L^2(U)}^2``; gradients are Riesz representatives in
that norm, so a gradient step of length one is scale free in time.  Gradients
come from central finite differences of the reduced objective.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import norms
from .forward import LoadProgram, SolverError, SolverOptions, run_forward
from .pool import parallel_map

OBJECTIVES = ("psi1", "psi2", "psi3")
ADMISSIBLE = ("U1", "U2")


@dataclass
class Objective:
    """Tracking term plus Tikhonov weight.

    ``psi1``: ``1/2 |u - target|^2_{L^2(0,T; L^2)}`` with a constant or nodal target.
    ``psi2``: ``1/2 |u(T) - target|^2_{L^2}``.
    ``psi3``: ``1/2 |eps(u(T)) - target|^2_{L^2}`` with a strain-field target.
    """

    variant: str
    target: np.ndarray
    nu: float

    def __post_init__(self):
        if self.variant not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.variant!r}; known: {OBJECTIVES}")
        if not self.nu > 0:
            raise ValueError("the Tikhonov weight must be positive")
        self.target = np.asarray(self.target, dtype=float)

    def check(self, model, N):
        if self.variant == "psi1":
            ok = self.target.shape in ((model.n,), (N + 1, model.n))
        elif self.variant == "psi2":
            ok = self.target.shape == (model.n,)
        else:
            ok = self.target.shape == (model.npts, model.nc)
        if not ok:
            raise ValueError(f"{self.variant} target has shape {self.target.shape}")

    def tracking(self, model, traj):
        if self.variant == "psi1":
            d = model.mass_coords(traj.u - self.target)
            return 0.5 * norms.l2(traj.times, d) ** 2
        if self.variant == "psi2":
            d = model.mass_coords(traj.u[-1] - self.target)
            return 0.5 * float(d @ d)
        d = model.strain_l2_coords(model.strain_of(traj.u[-1]) - self.target)
        return 0.5 * float(d @ d)


@dataclass
class AdmissibleSet:
    """``U1``: ``g_0 = 0`` and ``|g_i|_U <= rho``.  ``U2``: ``g_0 = g_N = 0``."""

    variant: str = "U2"
    rho: float = None

    def __post_init__(self):
        if self.variant not in ADMISSIBLE:
            raise ValueError(f"unknown admissible set {self.variant!r}; known: {ADMISSIBLE}")
        if self.variant == "U1" and (self.rho is None or self.rho < 0):
            raise ValueError("U1 needs a radius rho >= 0")

    @property
    def exact_projection(self):
        return self.variant == "U2"

    def free_nodes(self, N):
        return np.arange(1, N) if self.variant == "U2" else np.arange(1, N + 1)

    def contains(self, model, g, tol=1e-9):
        g = np.asarray(g, dtype=float)
        if np.abs(g[0]).max() > tol:
            return False
        if self.variant == "U2":
            return bool(np.abs(g[-1]).max() <= tol)
        size = np.linalg.norm(model.g_coords(g), axis=1)
        return bool(np.all(size <= self.rho + tol))


def time_gram(N, tau):
    """Gram matrix of ``|f(0)|^2 + |f'|_{L^2}^2`` for scalar nodal values on ``N`` cells."""
    D = np.zeros((N + 1, N + 1))
    for i in range(N):
        D[i, i] += 1.0
        D[i + 1, i + 1] += 1.0
        D[i, i + 1] -= 1.0
        D[i + 1, i] -= 1.0
    G = D / tau
    G[0, 0] += 1.0
    return G


def h1_norm(model, times, g):
    return norms.h1(times, model.g_coords(g))


def h1_inner(model, tau, a, b):
    """Discrete H1 inner product of two nodal control trajectories on one grid."""
    G = time_gram(len(a) - 1, tau)
    return float(np.sum((G @ np.asarray(a)) * np.asarray(b) * model.control_weights))


def project_admissible(aset, model, g, tau=None):
    """Project a control trajectory onto the admissible set.

    ``U2`` is projected exactly in the H1 metric: the free nodes receive the
    correction that is H1-orthogonal to the pinned end values.  ``U1`` sets
    ``g_0 = 0`` and scales each node radially into the ball, which is exact
    in ``L^2(0,T;U)`` but only approximate in H1 (``aset.exact_projection``
    is False).
    """
    g = np.array(g, dtype=float)
    N = len(g) - 1
    if aset.variant == "U2":
        tau = tau if tau is not None else 1.0
        G = time_gram(N, tau)
        free = aset.free_nodes(N)
        pinned = np.array([0, N])
        corr = np.linalg.solve(G[np.ix_(free, free)], G[np.ix_(free, pinned)] @ g[pinned])
        out = g.copy()
        out[free] += corr
        out[pinned] = 0.0
        return out
    g[0] = 0.0
    size = np.linalg.norm(model.g_coords(g), axis=1)
    over = size > aset.rho
    if aset.rho == 0:
        g[:] = 0.0
    elif over.any():
        g[over] *= (aset.rho / size[over])[:, None]
    return g


@dataclass
class ControlProblem:
    """Minimize ``psi(u) + nu/2 |g|_H1^2 (+ 1/2 |g - anchor|_H1^2)`` over admissible ``g``."""

    model: object
    T: float
    N: int
    objective: Objective
    admissible: AdmissibleSet = field(default_factory=AdmissibleSet)
    prox_anchor: tuple = None
    solver: SolverOptions = None

    def __post_init__(self):
        if not self.T > 0 or int(self.N) < 1:
            raise ValueError("need T > 0 and N >= 1")
        self.N = int(self.N)
        self.objective.check(self.model, self.N)
        if self.prox_anchor is not None:
            t, g = self.prox_anchor
            t, g = np.asarray(t, dtype=float), np.asarray(g, dtype=float)
            if g.shape[1:] != (self.model.m,) or not np.isclose(t[-1], self.T):
                raise ValueError("the proximal anchor must be a control trajectory on [0, T]")
            self.prox_anchor = (t, g)

    @property
    def tau(self):
        return self.T / self.N

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.N + 1)

    def with_anchor(self, times, g):
        return ControlProblem(self.model, self.T, self.N, self.objective, self.admissible,
                              (times, g), self.solver)

    def on_grid(self, N):
        """The same problem on another grid (targets of ``psi1`` must be constant)."""
        return ControlProblem(self.model, self.T, N, self.objective, self.admissible,
                              self.prox_anchor, self.solver)


def _terms(cp, g):
    g = np.asarray(g, dtype=float)
    if g.shape != (cp.N + 1, cp.model.m):
        raise ValueError(f"controls must have shape {(cp.N + 1, cp.model.m)}, got {g.shape}")
    if np.any(g[0] != 0.0):
        raise ValueError("controls must start from zero")
    traj = run_forward(cp.model, LoadProgram(cp.T, g), cp.solver)
    track = cp.objective.tracking(cp.model, traj)
    tik = 0.5 * cp.objective.nu * h1_norm(cp.model, traj.times, g) ** 2
    prox = 0.0
    if cp.prox_anchor is not None:
        ta, ga = cp.prox_anchor
        t, d = norms.difference(traj.times, cp.model.g_coords(g), ta, cp.model.g_coords(ga))
        prox = 0.5 * norms.h1(t, d) ** 2
    return track, tik, prox, traj


def reduced_objective(cp, g, return_state=False):
    track, tik, prox, traj = _terms(cp, g)
    value = track + tik + prox
    return (value, traj) if return_state else value


def _probe(job):
    cp, g = job
    return reduced_objective(cp, g)


def fd_gradient(cp, g, h=1e-6, jobs=1):
    """H1 Riesz representative of the central-difference gradient.

    Only free coordinates are perturbed (``g_0``, and ``g_N`` under ``U2``,
    stay fixed); the representative vanishes on the pinned nodes.
    """
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    g = np.asarray(g, dtype=float)
    free = cp.admissible.free_nodes(cp.N)
    m = cp.model.m
    probes = []
    for i in free:
        for c in range(m):
            for sgn in (1.0, -1.0):
                gp = g.copy()
                gp[i, c] += sgn * h
                probes.append((cp, gp))
    vals = np.array(parallel_map(_probe, probes, jobs)).reshape(len(free), m, 2)
    grad = (vals[:, :, 0] - vals[:, :, 1]) / (2.0 * h)
    G = time_gram(cp.N, cp.tau)[np.ix_(free, free)]
    rep = np.zeros_like(g)
    rep[free] = np.linalg.solve(G, grad) / cp.model.control_weights
    return rep


@dataclass
class PGOptions:
    tol: float = 1e-7
    step_tol: float = 1e-12
    max_iter: int = 200
    fd_step: float = 1e-6
    armijo: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 40
    jobs: int = 1


@dataclass
class PGResult:
    g: np.ndarray
    value: float
    status: str
    history: list

    @property
    def steps(self):
        return sum(1 for h in self.history if h["accepted"])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "objective", "gradient_norm", "step", "step_norm"])
        for h in self.history:
            w.writerow([h["iteration"]] + [format(float(h[k]), ".17g")
                                           for k in ("objective", "gradient_norm", "step", "step_norm")])
        return buf.getvalue()

    def to_dict(self, times):
        return {"status": self.status, "objective": self.value, "steps": self.steps,
                "times": np.asarray(times).tolist(), "g": self.g.tolist()}

    def to_json(self, times):
        return json.dumps(self.to_dict(times), indent=1, sort_keys=True)


def projected_gradient(cp, g_init, opts=None):
    """Projected gradient descent in the H1 metric with Armijo backtracking.

    Stops when the projected-gradient residual ``|g - P(g - grad)|_H1`` or the
    accepted step falls below the tolerances.  ``status`` is one of
    ``converged``, ``small-step``, ``max-iter`` and ``stagnation``.
    """
    opts = opts or PGOptions()
    aset, model, tau = cp.admissible, cp.model, cp.tau
    g = np.array(g_init, dtype=float)
    if not aset.contains(model, g):
        raise ValueError("the initial control is not admissible")
    value = reduced_objective(cp, g)
    history = []
    status = "max-iter"
    for it in range(opts.max_iter):
        rep = fd_gradient(cp, g, opts.fd_step, opts.jobs)
        pg = g - project_admissible(aset, model, g - rep, tau)
        gnorm = np.sqrt(max(h1_inner(model, tau, pg, pg), 0.0))
        record = {"iteration": it, "objective": value, "gradient_norm": gnorm,
                  "step": 0.0, "step_norm": 0.0, "accepted": False}
        if gnorm <= opts.tol:
            history.append(record)
            status = "converged"
            break
        s = opts.initial_step
        for _ in range(opts.max_backtracks):
            trial = project_admissible(aset, model, g - s * rep, tau)
            delta = trial - g
            decrease = -h1_inner(model, tau, rep, delta)
            try:
                tval = reduced_objective(cp, trial)
            except SolverError:
                tval = np.inf
            if tval <= value - opts.armijo * decrease and tval < value:
                break
            s *= opts.backtrack
        else:
            history.append(record)
            status = "stagnation"
            break
        snorm = np.sqrt(max(h1_inner(model, tau, delta, delta), 0.0))
        record.update(step=s, step_norm=snorm, accepted=True)
        history.append(record)
        g, value = trial, tval
        if snorm <= opts.step_tol:
            history.append({"iteration": it + 1, "objective": value, "gradient_norm": np.nan,
                            "step": 0.0, "step_norm": 0.0, "accepted": False})
            status = "small-step"
            break
    return PGResult(g, float(value), status, history)


def prolong(times_coarse, g_coarse, times_fine):
    """Linear-interpolation prolongation of a control trajectory."""
    return norms.resample(times_coarse, g_coarse, times_fine)


def approximation_experiment(cp, steps=(8, 16, 32), g_init=None, opts=None):
    """Minimizers of the problem on successively finer grids.

    Each grid starts from the prolongated previous minimizer.  Then the
    anchored problems, with the finest minimizer as anchor, are solved on
    every grid from the anchor's nodal restriction.  Failures are recorded
    and the experiment continues.
    """
    opts = opts or PGOptions()
    steps = [int(n) for n in steps]
    results = []
    prev = None
    for N in steps:
        cpN = cp.on_grid(N)
        t = cpN.times
        if prev is None:
            start = g_init(t) if callable(g_init) else np.zeros((N + 1, cp.model.m))
        else:
            start = prolong(prev[0], prev[1], t)
        start = project_admissible(cpN.admissible, cp.model, start, cpN.tau)
        try:
            res = projected_gradient(cpN, start, opts)
            results.append({"N": N, "tau": cpN.tau, "status": res.status, "objective": res.value,
                            "steps": res.steps, "g": res.g, "times": t})
            prev = (t, res.g)
        except (SolverError, ValueError) as exc:
            results.append({"N": N, "tau": cpN.tau, "status": f"failed: {exc}"})
    solved = [r for r in results if "g" in r]
    dist = []
    for a, b in zip(solved, solved[1:]):
        tt, d = norms.difference(a["times"], cp.model.g_coords(a["g"]), b["times"],
                                 cp.model.g_coords(b["g"]))
        dist.append(norms.h1(tt, d))
    anchored = []
    if solved:
        anchor = (solved[-1]["times"], solved[-1]["g"])
        for N in steps:
            cpa = cp.on_grid(N).with_anchor(*anchor)
            start = project_admissible(cpa.admissible, cp.model,
                                       norms.resample(anchor[0], anchor[1], cpa.times), cpa.tau)
            try:
                res = projected_gradient(cpa, start, opts)
                anchored.append({"N": N, "status": res.status, "steps": res.steps,
                                 "objective": res.value,
                                 "distance_to_anchor": float(np.sqrt(2.0 * max(
                                     _terms(cpa, res.g)[2], 0.0)))})
            except (SolverError, ValueError) as exc:
                anchored.append({"N": N, "status": f"failed: {exc}"})
    return {
        "minimizers": results,
        "successive_h1_distances": dist,
        # coincident minimizers (distance exactly zero) count as converged
        "cauchy_decrease": bool(dist) and all(b < a or b == 0.0 for a, b in zip(dist, dist[1:])),
        "anchored": anchored,
        "anchor_zero_steps": bool(anchored and anchored[-1].get("steps") == 0),
    }
