"""Symmetric tensor algebra in component storage.

A symmetric d-by-d tensor is stored as its d(d+1)/2 independent entries:
the diagonal first, then the upper off-diagonal entries row by row.  For
d = 3 the layout is ``(11, 22, 33, 12, 13, 23)``, for d = 2 it is
``(11, 22, 12)``.  Off-diagonal entries are stored once and carry weight 2
in the Frobenius product, so ``frobenius`` is exact without building full
matrices.

All functions act on the trailing axis, so a field of tensors is simply an
array of shape ``(..., ncomp)``.  A generalized stress (stress, back stress)
is an array of shape ``(..., 2, ncomp)``.
"""

from functools import lru_cache

import numpy as np


def ncomp(dim):
    return dim * (dim + 1) // 2


def dim_of(nc):
    """Spatial dimension belonging to ``nc`` stored components."""
    d = int(round((np.sqrt(8 * nc + 1) - 1) / 2))
    if d < 1 or ncomp(d) != nc:
        raise ValueError(f"{nc} is not a valid number of symmetric components")
    return d


@lru_cache(maxsize=None)
def _index_pairs(dim):
    pairs = [(i, i) for i in range(dim)]
    pairs += [(i, j) for i in range(dim) for j in range(i + 1, dim)]
    return tuple(pairs)


@lru_cache(maxsize=None)
def _weights(dim):
    w = np.ones(ncomp(dim))
    w[dim:] = 2.0
    w.setflags(write=False)
    return w


def weights(dim):
    """Duplication weights of the component layout (1 on the diagonal, 2 off it)."""
    return _weights(dim)


@lru_cache(maxsize=None)
def _identity(dim):
    e = np.zeros(ncomp(dim))
    e[:dim] = 1.0
    e.setflags(write=False)
    return e


def identity(dim):
    return _identity(dim)


def from_matrix(m):
    """Components of the symmetric part of ``m`` (shape ``(..., d, d)``)."""
    m = np.asarray(m, dtype=float)
    dim = m.shape[-1]
    sym = 0.5 * (m + np.swapaxes(m, -1, -2))
    return np.stack([sym[..., i, j] for i, j in _index_pairs(dim)], axis=-1)


def to_matrix(c):
    """Full symmetric matrix from components (shape ``(..., ncomp)``)."""
    c = np.asarray(c, dtype=float)
    dim = dim_of(c.shape[-1])
    out = np.zeros(c.shape[:-1] + (dim, dim))
    for k, (i, j) in enumerate(_index_pairs(dim)):
        out[..., i, j] = c[..., k]
        out[..., j, i] = c[..., k]
    return out


def frobenius(a, b):
    """Frobenius product ``a : b`` contracted over the trailing axis."""
    a = np.asarray(a, dtype=float)
    w = weights(dim_of(a.shape[-1]))
    return np.sum(w * a * np.asarray(b, dtype=float), axis=-1)


def norm(a):
    return np.sqrt(np.maximum(frobenius(a, a), 0.0))


def trace(a):
    a = np.asarray(a, dtype=float)
    return np.sum(a[..., : dim_of(a.shape[-1])], axis=-1)


def dev(a):
    """Deviatoric part ``a - tr(a)/d * I``."""
    a = np.asarray(a, dtype=float)
    dim = dim_of(a.shape[-1])
    return a - (trace(a) / dim)[..., None] * identity(dim)


@lru_cache(maxsize=None)
def _dev_matrix(dim):
    nc = ncomp(dim)
    e = identity(dim)
    p = np.eye(nc) - np.outer(e, e) / dim
    p.setflags(write=False)
    return p


def dev_matrix(dim):
    """Matrix ``P`` acting on component vectors with ``P @ a == dev(a)``."""
    return _dev_matrix(dim)


def weight_matrix(dim):
    return np.diag(weights(dim))


def dd(S):
    """``dev(sigma) + dev(chi)`` for generalized stresses of shape ``(..., 2, nc)``."""
    S = np.asarray(S, dtype=float)
    return dev(S[..., 0, :] + S[..., 1, :])


def dd_adjoint(t):
    """``(dev t, dev t)``, the adjoint of :func:`dd` under the Frobenius pairings."""
    d = dev(t)
    return np.stack([d, d], axis=-2)


def pair(S1, S2):
    """Frobenius pairing on pairs: ``sigma1 : sigma2 + chi1 : chi2``."""
    return np.sum(frobenius(S1, S2), axis=-1)


def yield_phi(S, sigma0):
    """Von Mises yield function ``(|dd(S)|^2 - sigma0^2) / 2``."""
    if not sigma0 > 0:
        raise ValueError(f"yield stress must be positive, got {sigma0}")
    s = dd(S)
    return 0.5 * (frobenius(s, s) - sigma0**2)


def is_symmetric_map(L, dim, rtol=1e-12):
    """Whether the component-space matrix ``L`` is self-adjoint under ``:``."""
    wl = weight_matrix(dim) @ L
    return np.allclose(wl, wl.T, rtol=rtol, atol=rtol * np.abs(wl).max())


def is_positive_map(L, dim):
    """Whether ``L`` is self-adjoint and positive definite under ``:``."""
    if not is_symmetric_map(L, dim):
        return False
    wl = weight_matrix(dim) @ L
    return bool(np.linalg.eigvalsh(0.5 * (wl + wl.T)).min() > 0)
