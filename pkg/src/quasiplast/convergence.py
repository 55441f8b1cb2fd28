"""Refinement experiments for the time-discrete forward solver.

Trajectories on different grids are compared through their interpolants on
the union grid, with exact cell integrals (see :mod:`quasiplast.norms`).  The
reference solution of a study is the run on the finest grid.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import norms
from .forward import LoadProgram, SolverOptions, WAVEFORMS, run_forward
from .pool import parallel_map


def lambda_coords(model, lam):
    """Cell values of the multiplier scaled so the point-wise L2 norm is Euclidean."""
    return np.asarray(lam, dtype=float) * np.sqrt(model.weights)


def compare(traj_a, traj_b, model=None):
    """Distances between two trajectories on the same time interval.

    Returns L-infinity, L2 and H1 distances of ``Sigma`` (A-norm) and ``u``
    (V-norm), and the L2 distance of the multiplier.  Without a model the
    raw components are used.
    """
    if not np.isclose(traj_a.T, traj_b.T, rtol=1e-12, atol=0):
        raise ValueError(f"final times differ: {traj_a.T} vs {traj_b.T}")
    if model is None:
        sc = lambda S: np.asarray(S).reshape(len(S), -1)  # noqa: E731
        uc = lambda u: np.asarray(u)  # noqa: E731
        lc = lambda lam: np.asarray(lam)  # noqa: E731
    else:
        sc, uc = model.sigma_coords, model.u_coords
        lc = lambda lam: lambda_coords(model, lam)  # noqa: E731
    out = {}
    for key, a, b, coords in (
        ("Sigma", traj_a.Sigma, traj_b.Sigma, sc),
        ("u", traj_a.u, traj_b.u, uc),
    ):
        t, d = norms.difference(traj_a.times, coords(a), traj_b.times, coords(b))
        out[f"{key}_Linf"] = norms.linf(d)
        out[f"{key}_L2"] = norms.l2(t, d)
        out[f"{key}_H1"] = norms.h1(t, d)
    t, d = norms.cell_difference(traj_a.times, lc(traj_a.lam), traj_b.times, lc(traj_b.lam))
    out["lambda_L2"] = norms.pc_l2(t, d)
    return out


@dataclass(frozen=True)
class LoadSpec:
    """Closed-form load ``g(t) = amplitude * waveform(t / T) * direction``.

    Picklable, so refinement runs can go to worker processes.
    """

    waveform: str
    amplitude: float
    T: float = 1.0
    direction: tuple = None

    def __post_init__(self):
        if self.waveform not in WAVEFORMS:
            raise KeyError(f"unknown waveform {self.waveform!r}")
        if not self.T > 0:
            raise ValueError("final time must be positive")

    def program(self, model, N):
        d = model.load_direction if self.direction is None else np.asarray(self.direction)
        shape = WAVEFORMS[self.waveform]
        return LoadProgram.from_function(
            lambda t: self.amplitude * shape(t / self.T) * d, self.T, N
        )


def _solve_job(job):
    model, load, N, opts = job
    return run_forward(model, load.program(model, N), opts)


@dataclass
class RefinementStudy:
    """A model and a closed-form load solved on a family of nested grids.

    ``steps`` lists the numbers of steps, increasing (so the step sizes
    ``T / N`` decrease); ``reference_steps`` is the finest grid.
    """

    model: object
    load: LoadSpec
    steps: tuple = (8, 16, 32, 64, 128, 256, 512)
    reference_steps: int = 1024
    opts: SolverOptions = None
    jobs: int = 1
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.steps = tuple(int(n) for n in self.steps)
        if len(self.steps) < 2 or any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("step counts must be strictly increasing (taus decreasing)")
        grids = self.steps + (self.reference_steps,)
        if self.reference_steps <= self.steps[-1] or any(b % a for a, b in zip(grids, grids[1:])):
            raise ValueError("grids must nest, ending in a strictly finer reference")
        self.opts = self.opts or SolverOptions()

    @property
    def taus(self):
        return np.array([self.load.T / n for n in self.steps])

    def solve_all(self):
        todo = [n for n in self.steps + (self.reference_steps,) if n not in self._cache]
        jobs = [(self.model, self.load, n, self.opts) for n in todo]
        for n, traj in zip(todo, parallel_map(_solve_job, jobs, self.jobs)):
            self._cache[n] = traj
        return [self._cache[n] for n in self.steps]

    def trajectory(self, N):
        if N not in self._cache:
            self._cache[N] = _solve_job((self.model, self.load, N, self.opts))
        return self._cache[N]

    @property
    def reference(self):
        return self.trajectory(self.reference_steps)


def pairwise_orders(taus, errors):
    """``log2``-type orders between consecutive refinements (nan where undefined)."""
    taus, errors = np.asarray(taus, float), np.asarray(errors, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(errors[:-1] / errors[1:]) / np.log(taus[:-1] / taus[1:])


def fitted_order(taus, errors):
    """Least-squares slope of ``log(error)`` against ``log(tau)``."""
    taus, errors = np.asarray(taus, float), np.asarray(errors, float)
    keep = errors > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(taus[keep]), np.log(errors[keep]), 1)[0])


@dataclass
class RateReport:
    taus: np.ndarray
    errors: np.ndarray
    orders: np.ndarray
    order: float
    monotone: bool
    threshold: float

    @property
    def passed(self):
        return bool(self.order >= self.threshold)

    def rows(self):
        yield ["tau", "error", "observed_order"]
        for k, (t, e) in enumerate(zip(self.taus, self.errors)):
            o = self.orders[k - 1] if k else float("nan")
            yield [t, e, o]

    def to_dict(self):
        return {
            "taus": self.taus.tolist(),
            "errors": self.errors.tolist(),
            "orders": self.orders.tolist(),
            "order": self.order,
            "monotone": self.monotone,
            "threshold": self.threshold,
            "passed": self.passed,
        }


def rate_study_Linfty(study, threshold=0.45):
    """Observed order of ``|Sigma^tau - Sigma^ref|_{L^inf(A)}``.

    The squared error is first order in ``tau`` for loads with a derivative
    of bounded variation, so the expected order is one half.
    """
    trajs = study.solve_all()
    ref = study.reference
    m = study.model
    errors = []
    for tr in trajs:
        _, d = norms.difference(tr.times, m.sigma_coords(tr.Sigma), ref.times, m.sigma_coords(ref.Sigma))
        errors.append(norms.linf(d))
    errors = np.array(errors)
    scale = max(1.0, norms.linf(m.sigma_coords(ref.Sigma)))
    if np.all(errors <= 1e-12 * scale):
        orders = np.full(len(errors) - 1, np.nan)
        return RateReport(study.taus, errors, orders, np.inf, True, threshold)
    return RateReport(
        study.taus,
        errors,
        pairwise_orders(study.taus, errors),
        fitted_order(study.taus, errors),
        bool(np.all(np.diff(errors) <= 0)),
        threshold,
    )


def cell_certificate(model, traj):
    """Per-cell margins ``|Sigma_{ell'} |_A - |Sigma_{ell'} - 2 Sigma'|_A`` (nonnegative when the bound holds)."""
    tau = np.diff(traj.times)
    out = np.empty(len(tau))
    for i, h in enumerate(tau):
        lift = model.sigma_of_ell((traj.ell[i + 1] - traj.ell[i]) / h)
        rate = (traj.Sigma[i + 1] - traj.Sigma[i]) / h
        a = np.linalg.norm(model.sigma_coords(lift))
        b = np.linalg.norm(model.sigma_coords(lift - 2.0 * rate))
        out[i] = a - b
    return out


def _monotone_within(errors, slack):
    errors = np.asarray(errors)
    return bool(np.all(errors[1:] <= (1.0 + slack) * errors[:-1]))


def h1_cauchy_study(study, slack=0.05, ratio_limit=0.1, cert_tol=1e-10):
    """H1 distances of ``(Sigma, u)`` to the reference plus the per-cell certificate."""
    trajs = study.solve_all()
    ref = study.reference
    m = study.model
    sig, disp = [], []
    for tr in trajs:
        c = compare(tr, ref, m)
        sig.append(c["Sigma_H1"])
        disp.append(c["u_H1"])
    sig, disp = np.array(sig), np.array(disp)
    margins = []
    scales = []
    for tr in trajs + [ref]:
        cert = cell_certificate(m, tr)
        margins.append(float(cert.min()))
        lifts = [np.linalg.norm(m.sigma_coords(m.sigma_of_ell(d))) for d in np.diff(tr.ell, axis=0)]
        scales.append(max(1.0, max(lifts) / tr.tau))
    cert_ok = all(mg >= -cert_tol * s for mg, s in zip(margins, scales))
    ratio = float(sig[-1] / sig[0]) if sig[0] > 0 else 0.0
    return {
        "taus": study.taus.tolist(),
        "sigma_h1": sig.tolist(),
        "u_h1": disp.tolist(),
        "monotone": _monotone_within(sig, slack) and _monotone_within(disp, slack),
        "ratio": ratio,
        "ratio_limit": ratio_limit,
        "ratio_ok": bool(ratio <= ratio_limit),
        "certificate_min_margin": margins,
        "certificate_ok": bool(cert_ok),
    }


def multiplier_identity(model, traj):
    """Both sides of ``|lambda|_{L^2} = |H^{-1} chi'|_{L^2} / sigma0`` for one run."""
    from . import tensor

    lhs = norms.pc_l2(traj.times, lambda_coords(model, traj.lam))
    tau = np.diff(traj.times)
    chi_rate = np.diff(traj.Sigma[:, :, 1, :], axis=0) / tau[:, None, None]
    flow = chi_rate @ model.law.h_inv.T
    point = np.sqrt(np.maximum(tensor.frobenius(flow, flow), 0.0)) * np.sqrt(model.weights)
    rhs = norms.pc_l2(traj.times, point) / model.law.sigma0
    return float(lhs), float(rhs)


def multiplier_study(study, rtol=1e-10, ratio_limit=0.2):
    trajs = study.solve_all()
    ref = study.reference
    m = study.model
    ident = [multiplier_identity(m, tr) for tr in trajs + [ref]]
    rel = [abs(a - b) / max(a, b) if max(a, b) > 0 else 0.0 for a, b in ident]
    errs = np.array([compare(tr, ref, m)["lambda_L2"] for tr in trajs])
    ratio = float(errs[-1] / errs[0]) if errs[0] > 0 else 0.0
    return {
        "taus": study.taus.tolist(),
        "identity": [list(x) for x in ident],
        "identity_rel_error": rel,
        "identity_ok": bool(max(rel) <= rtol),
        "lambda_l2_errors": errs.tolist(),
        "orders": pairwise_orders(study.taus, errs).tolist(),
        "ratio": ratio,
        "ratio_limit": ratio_limit,
        "ratio_ok": bool(ratio <= ratio_limit),
    }


def _observables(model, traj, sigma_test, u_test):
    """``int <Sigma, T>_A dt`` and ``int <eps(u), eps(v)> dt`` for fixed test data."""
    flat = traj.Sigma.reshape(len(traj.Sigma), -1)
    s = flat @ (model.a_gram @ sigma_test.reshape(-1))
    v = traj.u @ (model.strain_gram @ u_test)
    return float(norms.integral(traj.times, s)[0]), float(norms.integral(traj.times, v)[0])


def weak_convergence_probe(model, load, amplitude, steps=(8, 16, 32, 64, 128), seed=0, opts=None):
    """Oscillating loads ``g(t_i) + a tau (i mod 2) d`` that converge weakly in H1 but not strongly.

    Reports the gaps of two time-integrated linear observables to the
    unperturbed run on the same grid, and the L2 norm of the load derivative.
    """
    rng = np.random.default_rng(seed)
    sigma_test = rng.standard_normal(model.field_shape)
    u_test = rng.standard_normal(model.n)
    d = model.load_direction if load.direction is None else np.asarray(load.direction)
    rows = []
    for N in steps:
        base = load.program(model, N)
        tau = base.T / N
        wiggle = amplitude * tau * (np.arange(N + 1) % 2)[:, None] * d[None, :]
        pert = LoadProgram(base.T, base.g_nodes + wiggle)
        tb = run_forward(model, base, opts)
        tp = run_forward(model, pert, opts)
        ob = _observables(model, tb, sigma_test, u_test)
        op = _observables(model, tp, sigma_test, u_test)
        gdot = norms.derivative_lq(base.times, model.g_coords(pert.g_nodes), 2)
        gdot_base = norms.derivative_lq(base.times, model.g_coords(base.g_nodes), 2)
        rows.append(
            {
                "tau": tau,
                "sigma_observable_gap": abs(op[0] - ob[0]),
                "u_observable_gap": abs(op[1] - ob[1]),
                "load_rate_l2": gdot,
                "base_load_rate_l2": gdot_base,
            }
        )
    return rows


def _random_load_pair(model, T, N, rng, scale):
    t = np.linspace(0.0, T, N + 1)
    m = model.m
    modes = rng.standard_normal((3, m))
    freqs = np.array([1.0, 2.0, 3.0])
    base = np.sin(np.outer(t / T, freqs) * np.pi) @ modes
    bump = rng.standard_normal((N + 1, m)) * scale * rng.uniform(0.01, 1.0)
    bump[0] = 0.0
    return LoadProgram(T, base * scale), LoadProgram(T, base * scale + bump)


def stability_ratios(model, T=1.0, N=32, pairs=20, seed=0, scale=None, opts=None):
    """Observed Hoelder and Lipschitz ratios of the forward map over random load pairs.

    ``holder``: ``|Sigma_1 - Sigma_2|^2_{L^inf} / |ell_1 - ell_2|_{L^2}``;
    ``lipschitz``: ``|(Sigma, u)_1 - (Sigma, u)_2|_{L^inf} / |ell_1 - ell_2|_{W^{1,1}}``.
    Both are reported, not compared with a constant.
    """
    rng = np.random.default_rng(seed)
    if scale is None:
        scale = 3.0 * model.law.sigma0 / max(np.abs(model.load_direction).max(), 1e-300)
    holder, lipschitz = [], []
    for _ in range(pairs):
        a, b = _random_load_pair(model, T, N, rng, scale)
        ta, tb = run_forward(model, a, opts), run_forward(model, b, opts)
        t = ta.times
        dS = model.sigma_coords(ta.Sigma - tb.Sigma)
        du = model.u_coords(ta.u - tb.u)
        dl = model.ell_coords(ta.ell - tb.ell)
        l2 = norms.l2(t, dl)
        w11 = norms.w11(t, dl)
        if l2 > 0:
            holder.append(norms.linf(dS) ** 2 / l2)
            lipschitz.append(norms.linf(np.hstack([dS, du])) / w11)
    return {
        "holder_ratios": holder,
        "holder_max": float(max(holder)) if holder else 0.0,
        "lipschitz_ratios": lipschitz,
        "lipschitz_max": float(max(lipschitz)) if lipschitz else 0.0,
    }


def to_csv(report_rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in report_rows:
        w.writerow([x if isinstance(x, str) else format(float(x), ".17g") for x in row])
    return buf.getvalue()
