"""Spatially discrete small-strain model with linear kinematic hardening.

A model is a Galerkin surrogate of the continuum: a finite set of material
points with positive quadrature weights, a linear strain operator from
displacement coordinates to one symmetric tensor per point, and a control
operator from boundary traction coordinates to load functionals.

Conventions
-----------
* A generalized stress field ``Sigma`` has shape ``(npts, 2, nc)``; index
  ``[:, 0]`` is the stress, ``[:, 1]`` the back stress.
* Displacements ``u`` and load functionals ``ell`` live in ``R^n``; the load
  functional is paired with displacements by the plain dot product.
* ``B Sigma`` is the functional ``v -> -sum_p w_p sigma_p : eps_p(v)``.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from . import tensor


@dataclass(frozen=True, eq=False)
class MaterialLaw:
    """Compliance, inverse hardening modulus and yield stress.

    ``c_inv`` and ``h_inv`` are ``(nc, nc)`` matrices acting on component
    vectors.  ``radial_modulus`` is set when ``dev(C s) + dev(H s)`` is a
    fixed multiple of ``s`` for every deviatoric ``s`` (isotropic laws); the
    local projection is then closed-form.
    """

    c_inv: np.ndarray
    h_inv: np.ndarray
    sigma0: float
    radial_modulus: float | None = None

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError(f"yield stress must be positive, got {self.sigma0}")
        dim = self.dim
        for name in ("c_inv", "h_inv"):
            mat = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, mat)
            if mat.shape != (tensor.ncomp(dim), tensor.ncomp(dim)):
                raise ValueError(f"{name} has shape {mat.shape}")
            if not tensor.is_positive_map(mat, dim):
                raise ValueError(f"{name} is not symmetric positive definite")

    @property
    def dim(self):
        return tensor.dim_of(np.shape(self.c_inv)[0])

    @cached_property
    def c(self):
        return np.linalg.inv(self.c_inv)

    @cached_property
    def h(self):
        return np.linalg.inv(self.h_inv)

    def to_dict(self):
        return {
            "c_inv": self.c_inv.tolist(),
            "h_inv": self.h_inv.tolist(),
            "sigma0": self.sigma0,
            "radial_modulus": self.radial_modulus,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["c_inv"]), np.array(d["h_inv"]), d["sigma0"], d.get("radial_modulus"))


def isotropic_law(mu, lam, k1, sigma0, dim=3):
    """Isotropic elasticity with Lame constants and hardening constant ``k1``.

    ``C^{-1} sigma = sigma / (2 mu) - lam / (2 mu (2 mu + d lam)) tr(sigma) I``
    and ``H^{-1} chi = chi / k1``.
    """
    if not mu > 0:
        raise ValueError("shear modulus must be positive")
    if not dim * lam + 2 * mu > 0:
        raise ValueError("bulk coercivity violated: d*lam + 2*mu must be positive")
    if not k1 > 0:
        raise ValueError("hardening constant must be positive")
    nc = tensor.ncomp(dim)
    e = tensor.identity(dim)
    c_inv = np.eye(nc) / (2 * mu) - lam / (2 * mu * (2 * mu + dim * lam)) * np.outer(e, e)
    h_inv = np.eye(nc) / k1
    return MaterialLaw(c_inv, h_inv, float(sigma0), radial_modulus=2 * mu + k1)


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """Material points, strain operator, control operator and material law.

    Parameters
    ----------
    weights : (npts,) quadrature weights, all positive.
    strain : (npts * nc, n) matrix, ``strain @ u`` flattens ``eps(u)``.
    control : (n, m) matrix ``E`` with ``ell = E @ g``.
    control_weights : (m,) lumped boundary quadrature defining ``|g|_U``.
    mass : (n,) lumped mass defining the ``L^2(Omega)`` norm of displacements.
    load_direction : (m,) default traction pattern scaled by load waveforms.
    """

    name: str
    law: MaterialLaw
    weights: np.ndarray
    strain: np.ndarray
    control: np.ndarray
    control_weights: np.ndarray
    mass: np.ndarray
    load_direction: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("weights", "strain", "control", "control_weights", "mass", "load_direction"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if self.strain.shape != (self.npts * self.nc, self.n):
            raise ValueError(f"strain operator has shape {self.strain.shape}")
        if self.control.shape[0] != self.n:
            raise ValueError("control operator does not map into the load space")
        if self.control_weights.shape != (self.m,) or np.any(self.control_weights <= 0):
            raise ValueError("control weights must be positive, one per control coordinate")
        if self.mass.shape != (self.n,) or np.any(self.mass <= 0):
            raise ValueError("lumped mass must be positive, one per displacement coordinate")
        if self.load_direction.shape != (self.m,):
            raise ValueError("load direction must have one entry per control coordinate")
        if self.inf_sup_constant() <= 1e-12:
            raise ValueError("strain operator has a nontrivial kernel (inf-sup violated)")

    # sizes

    @property
    def dim(self):
        return self.law.dim

    @property
    def nc(self):
        return tensor.ncomp(self.dim)

    @property
    def npts(self):
        return self.weights.shape[0]

    @property
    def n(self):
        return self.strain.shape[1]

    @property
    def m(self):
        return self.control.shape[1]

    @property
    def field_shape(self):
        return (self.npts, 2, self.nc)

    def zero_field(self):
        return np.zeros(self.field_shape)

    def check_field(self, Sigma):
        Sigma = np.asarray(Sigma, dtype=float)
        if Sigma.shape != self.field_shape:
            raise ValueError(f"field has shape {Sigma.shape}, model expects {self.field_shape}")
        return Sigma

    def _check_u(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"vector has shape {u.shape}, model expects ({self.n},)")
        return u

    # assembled matrices

    @cached_property
    def point_metric(self):
        """``diag(w_p) (x) diag(component weights)`` on flattened tensor fields."""
        return np.kron(self.weights, tensor.weights(self.dim))

    @cached_property
    def strain_gram(self):
        """``G = E^T W E`` so that ``u^T G u = |eps(u)|_S^2``."""
        return self.strain.T @ (self.point_metric[:, None] * self.strain)

    @cached_property
    def _strain_cho(self):
        return linalg.cho_factor(self.strain_gram, lower=True)

    @cached_property
    def _strain_chol(self):
        return np.linalg.cholesky(self.strain_gram)

    @cached_property
    def a_gram(self):
        """Gram matrix of the A-inner product on flattened fields."""
        W = tensor.weight_matrix(self.dim)
        block = linalg.block_diag(W @ self.law.c_inv, W @ self.law.h_inv)
        block = 0.5 * (block + block.T)
        return np.kron(np.diag(self.weights), block)

    @cached_property
    def _a_chol(self):
        return np.linalg.cholesky(self.a_gram)

    @cached_property
    def stiffness(self):
        """Elastic stiffness ``K = E^T W C E`` (so that ``B (C eps(u), 0) = -K u``)."""
        Wc = np.kron(np.diag(self.weights), tensor.weight_matrix(self.dim) @ self.law.c)
        K = self.strain.T @ Wc @ self.strain
        return 0.5 * (K + K.T)

    @cached_property
    def _stiffness_cho(self):
        return linalg.cho_factor(self.stiffness, lower=True)

    def inf_sup_constant(self):
        """Smallest singular value of the weighted strain matrix."""
        ws = np.sqrt(np.kron(self.weights, tensor.weights(self.dim)))
        return float(np.linalg.svd(ws[:, None] * self.strain, compute_uv=False).min())

    def a_condition_number(self):
        ev = np.linalg.eigvalsh(self.a_gram)
        return float(ev.max() / ev.min())

    # operators

    def strain_of(self, u):
        return (self.strain @ self._check_u(u)).reshape(self.npts, self.nc)

    def apply_A(self, Sigma):
        Sigma = self.check_field(Sigma)
        return np.stack(
            [Sigma[:, 0] @ self.law.c_inv.T, Sigma[:, 1] @ self.law.h_inv.T], axis=1
        )

    def inner_A(self, S1, S2):
        AS2 = self.apply_A(S2)
        return float(np.sum(self.weights * tensor.pair(self.check_field(S1), AS2)))

    def inner(self, S1, S2):
        """Plain weighted Frobenius pairing on fields."""
        return float(np.sum(self.weights * tensor.pair(self.check_field(S1), self.check_field(S2))))

    def apply_B(self, Sigma):
        Sigma = self.check_field(Sigma)
        return -self.strain.T @ (self.point_metric * Sigma[:, 0].ravel())

    def apply_B_star(self, u):
        out = self.zero_field()
        out[:, 0] = -self.strain_of(u)
        return out

    def sigma_of_ell(self, ell):
        """Minimum-norm lift ``Sigma_ell = (sigma_ell, -sigma_ell)`` with ``B Sigma_ell = ell``.

        ``(sigma_ell, 0)`` is orthogonal to ``ker B``, i.e. ``sigma_ell = eps(v)``
        for the ``v`` solving ``-G v = ell``.
        """
        ell = self._check_u(ell)
        v = -linalg.cho_solve(self._strain_cho, ell)
        s = self.strain_of(v)
        out = np.stack([s, -s], axis=1)
        resid = np.linalg.norm(self.apply_B(out) - ell)
        if resid > 1e-10 * max(1.0, np.linalg.norm(ell)):
            raise ValueError(f"load outside the range of B (residual {resid:.3e})")
        return out

    def load(self, g):
        return self.control @ np.asarray(g, dtype=float)

    # coordinates in which the natural norms are Euclidean

    def sigma_coords(self, Sigma):
        """Coordinates with ``|coords|_2 = |Sigma|_A``; accepts a leading batch axis."""
        Sigma = np.asarray(Sigma, dtype=float)
        flat = Sigma.reshape(Sigma.shape[: Sigma.ndim - 3] + (-1,))
        return flat @ self._a_chol

    def u_coords(self, u):
        """Coordinates with ``|coords|_2 = |eps(u)|_S`` (the V norm)."""
        return np.asarray(u, dtype=float) @ self._strain_chol

    def ell_coords(self, ell):
        """Coordinates with ``|coords|_2`` the dual norm of ``ell`` on V."""
        ell = np.asarray(ell, dtype=float)
        return linalg.solve_triangular(self._strain_chol, ell.T, lower=True).T

    def g_coords(self, g):
        return np.asarray(g, dtype=float) * np.sqrt(self.control_weights)

    def mass_coords(self, u):
        return np.asarray(u, dtype=float) * np.sqrt(self.mass)

    def strain_l2_coords(self, eps):
        """Coordinates of a tensor field with ``|coords|_2 = |eps|_S``."""
        eps = np.asarray(eps, dtype=float)
        flat = eps.reshape(eps.shape[: eps.ndim - 2] + (-1,))
        return flat * np.sqrt(self.point_metric)

    # serialization

    def to_dict(self):
        return {
            "name": self.name,
            "law": self.law.to_dict(),
            "weights": self.weights.tolist(),
            "strain": self.strain.tolist(),
            "control": self.control.tolist(),
            "control_weights": self.control_weights.tolist(),
            "mass": self.mass.tolist(),
            "load_direction": self.load_direction.tolist(),
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            name=d["name"],
            law=MaterialLaw.from_dict(d["law"]),
            weights=np.array(d["weights"]),
            strain=np.array(d["strain"]),
            control=np.array(d["control"]),
            control_weights=np.array(d["control_weights"]),
            mass=np.array(d["mass"]),
            load_direction=np.array(d["load_direction"]),
            info=d.get("info", {}),
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


DEFAULT_PARAMETERS = {"mu": 100.0, "lam": 150.0, "k1": 20.0, "sigma0": 1.0}


def uniaxial(mu=100.0, lam=150.0, k1=20.0, sigma0=1.0, dim=3):
    """One material point driven along the fixed unit strain direction ``e_11``."""
    law = isotropic_law(mu, lam, k1, sigma0, dim)
    e = tensor.from_matrix(np.diag([1.0] + [0.0] * (dim - 1)))
    return DiscreteModel(
        name="uniaxial",
        law=law,
        weights=np.ones(1),
        strain=e[:, None],
        control=-np.ones((1, 1)),
        control_weights=np.ones(1),
        mass=np.ones(1),
        load_direction=np.ones(1),
        info={"direction": e.tolist(), "dim": dim},
    )


def patch2d(mu=100.0, lam=150.0, k1=20.0, sigma0=1.0, nx=4, ny=2, length=2.0, height=1.0,
            traction=(1.0, 0.5)):
    """Plane rectangle ``[0, length] x [0, height]`` of linear triangles.

    The edge ``x = 0`` is clamped, the edge ``x = length`` carries the traction
    controls (two components per boundary node, lumped edge quadrature).  Each
    element has one quadrature point; P1 strains are constant per element.
    """
    if nx < 1 or ny < 1 or 2 * nx * ny > 32:
        raise ValueError("patch2d supports 1 <= 2*nx*ny <= 32 elements")
    law = isotropic_law(mu, lam, k1, sigma0, dim=2)
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    nodes = np.array([(x, y) for y in ys for x in xs])

    def nid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            tris += [(a, b, c), (a, c, d)]

    free = [k for k in range(len(nodes)) if nodes[k, 0] > 0.0]
    dof = {k: idx for idx, k in enumerate(free)}
    n = 2 * len(free)

    areas = np.empty(len(tris))
    strain = np.zeros((3 * len(tris), n))
    mass = np.zeros(n)
    for e, tri in enumerate(tris):
        (x1, y1), (x2, y2), (x3, y3) = nodes[list(tri)]
        det = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
        areas[e] = 0.5 * det
        bx = np.array([y2 - y3, y3 - y1, y1 - y2]) / det
        by = np.array([x3 - x2, x1 - x3, x2 - x1]) / det
        for k, node in enumerate(tri):
            if node not in dof:
                continue
            ix, iy = 2 * dof[node], 2 * dof[node] + 1
            strain[3 * e + 0, ix] += bx[k]
            strain[3 * e + 1, iy] += by[k]
            strain[3 * e + 2, ix] += 0.5 * by[k]
            strain[3 * e + 2, iy] += 0.5 * bx[k]
            mass[ix] += areas[e] / 3
            mass[iy] += areas[e] / 3

    edge = [nid(nx, j) for j in range(ny + 1)]
    h = height / ny
    wq = np.full(ny + 1, h)
    wq[[0, -1]] = h / 2
    m = 2 * len(edge)
    control = np.zeros((n, m))
    for k, node in enumerate(edge):
        for c in range(2):
            control[2 * dof[node] + c, 2 * k + c] = -wq[k]
    return DiscreteModel(
        name="patch2d",
        law=law,
        weights=areas,
        strain=strain,
        control=control,
        control_weights=np.repeat(wq, 2),
        mass=mass,
        load_direction=np.tile(np.asarray(traction, dtype=float), len(edge)),
        info={"nx": nx, "ny": ny, "length": length, "height": height,
              "nodes": nodes.tolist(), "triangles": [list(t) for t in tris],
              "free_nodes": free, "traction_nodes": edge},
    )


CATALOG = {
    "uniaxial": {
        "factory": uniaxial,
        "summary": "one material point, n = 1 displacement coordinate, eps(u) = u e with "
                   "e = e1 (x) e1, m = 1 control coordinate, ell = -g",
        "parameters": ["mu", "lam", "k1", "sigma0", "dim"],
    },
    "patch2d": {
        "factory": patch2d,
        "summary": "plane rectangle of linear triangles (2*nx*ny <= 32), one quadrature point per "
                   "element, clamped edge x = 0, lumped traction controls on edge x = length",
        "parameters": ["mu", "lam", "k1", "sigma0", "nx", "ny", "length", "height", "traction"],
    },
}


def builtin_models():
    """Catalog of named model factories."""
    return dict(CATALOG)


def build_model(name, **params):
    try:
        entry = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(CATALOG)}") from None
    return entry["factory"](**params)
