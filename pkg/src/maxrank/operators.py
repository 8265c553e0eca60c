"""The two fully nonlinear operators, their derivatives, and discrete assembly.

Both operators act on the augmented space-time Hessian M = D2u + I', where
I' puts ones on the n space diagonal entries and zeroes on the time row and
column:

  * determinant kind:  F(M) = det M
  * Donaldson kind:    F(M) = M_tt * sum_j M_jj - sum_j M_jt M_tj

Derivatives follow the flat convention: all (n+1)^2 entries of M are treated
as independent variables and the result is evaluated at symmetric points.
This is the convention under which the pointwise identities checked in the
identities module hold entrywise (e.g. second cofactors with swapped index
pairs pick up a sign).  The quadratic operator is written with the time
column split evenly, M_jt M_tj -> (M_jt^2 + M_tj^2)/2, which makes its
gradient symmetric entry by entry.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ContractError
from .grid import GridSpec, Jet2, ScalarField, hessian_blocks
from .spectral import jacobi_eigh


class OperatorKind(enum.Enum):
    MONGE_AMPERE = "ma"
    DONALDSON = "donaldson"


@dataclass(frozen=True)
class Problem:
    """A Dirichlet problem: operator kind, grid, level eps, boundary data."""

    kind: OperatorKind
    spec: GridSpec
    eps: float
    u0: np.ndarray = field(repr=False)
    u1: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        u0 = np.asarray(self.u0, dtype=np.float64)
        u1 = np.asarray(self.u1, dtype=np.float64)
        if u0.shape != self.spec.space_shape or u1.shape != self.spec.space_shape:
            raise ConfigError("boundary data must live on the space lattice "
                              f"{self.spec.space_shape}, got {u0.shape} and {u1.shape}")
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "u1", u1)


def augment(hess: np.ndarray, n: int) -> np.ndarray:
    """M = hess + I' with ones added on the n space diagonal entries only."""
    M = np.array(hess, dtype=np.float64, copy=True)
    idx = np.arange(n)
    M[..., idx, idx] += 1.0
    return M


# ---------------------------------------------------------------------------
# matrix-level values and derivatives (flat convention)

def matrix_value(kind: OperatorKind, M: np.ndarray) -> np.ndarray:
    """F(M) for a matrix or a stack of matrices."""
    M = np.asarray(M, dtype=np.float64)
    if kind is OperatorKind.MONGE_AMPERE:
        return np.linalg.det(M)
    n = M.shape[-1] - 1
    diag = np.einsum("...ii->...i", M[..., :n, :n])
    return M[..., n, n] * diag.sum(axis=-1) - 0.5 * (
        (M[..., :n, n] ** 2).sum(axis=-1) + (M[..., n, :n] ** 2).sum(axis=-1))


def matrix_grad(kind: OperatorKind, M: np.ndarray) -> np.ndarray:
    """Entrywise first derivatives of F, same stack shape as M."""
    M = np.asarray(M, dtype=np.float64)
    d = M.shape[-1]
    n = d - 1
    out = np.zeros_like(M)
    if kind is OperatorKind.MONGE_AMPERE:
        for a in range(d):
            for b in range(d):
                minor = np.delete(np.delete(M, a, axis=-2), b, axis=-1)
                out[..., a, b] = (-1) ** (a + b) * np.linalg.det(minor)
        return out
    diag = np.einsum("...ii->...i", M[..., :n, :n])
    out[..., n, n] = diag.sum(axis=-1)
    for j in range(n):
        out[..., j, j] = M[..., n, n]
        out[..., j, n] = -M[..., j, n]
        out[..., n, j] = -M[..., n, j]
    return out


def matrix_hess(kind: OperatorKind, M: np.ndarray) -> np.ndarray:
    """Entrywise second derivatives of F as a (d, d, d, d) tensor.

    For the determinant these are signed second-order cofactors: strike rows
    {a, c} and columns {b, e}, with an extra sign when the row and column
    orders disagree.  The quadratic operator has a constant tensor.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ContractError("matrix_hess expects a single matrix")
    d = M.shape[-1]
    n = d - 1
    H = np.zeros((d, d, d, d))
    if kind is OperatorKind.MONGE_AMPERE:
        for a, b, c, e in itertools.product(range(d), repeat=4):
            if a == c or b == e:
                continue
            minor = np.delete(np.delete(M, (a, c), axis=0), (b, e), axis=1)
            sign = (-1) ** (a + b + c + e)
            if (a < c) != (b < e):
                sign = -sign
            H[a, b, c, e] = sign * (np.linalg.det(minor) if minor.size else 1.0)
        return H
    for j in range(n):
        H[n, n, j, j] = H[j, j, n, n] = 1.0
        H[j, n, j, n] = H[n, j, n, j] = -1.0
    return H


# ---------------------------------------------------------------------------
# jet-level wrappers

def f_value(kind: OperatorKind, jet: Jet2) -> float:
    return float(matrix_value(kind, augment(jet.hess, jet.hess.shape[0] - 1)))


def grad_F(kind: OperatorKind, jet: Jet2) -> np.ndarray:
    return matrix_grad(kind, augment(jet.hess, jet.hess.shape[0] - 1))


def hess_F(kind: OperatorKind, jet: Jet2) -> np.ndarray:
    return matrix_hess(kind, augment(jet.hess, jet.hess.shape[0] - 1))


def cone_check(kind: OperatorKind, jet: Jet2) -> tuple[bool, float]:
    """Ellipticity-cone membership with a margin (positive inside)."""
    n = jet.hess.shape[0] - 1
    M = augment(jet.hess, n)
    if kind is OperatorKind.MONGE_AMPERE:
        eigs, _ = jacobi_eigh(M[None])
        margin = float(eigs[0, 0])
    else:
        trace = float(np.trace(M[:n, :n]))
        margin = min(trace, float(matrix_value(kind, M)))
    return margin > 0, margin


# ---------------------------------------------------------------------------
# whole-grid evaluation

def interior_matrices(u: ScalarField) -> np.ndarray:
    """Augmented Hessian stack over the interior slices, shape (..., d, d)."""
    H = hessian_blocks(u.values, u.spec)
    return augment(H, u.spec.n)


def margin_blocks(kind: OperatorKind, M: np.ndarray) -> np.ndarray:
    """Pointwise cone margin over a stack of augmented Hessians."""
    n = M.shape[-1] - 1
    if kind is OperatorKind.MONGE_AMPERE:
        eigs, _ = jacobi_eigh(M)
        return eigs[..., 0]
    diag = np.einsum("...ii->...i", M[..., :n, :n])
    return np.minimum(diag.sum(axis=-1), matrix_value(kind, M))


def _check_boundary(problem: Problem, u: ScalarField) -> None:
    b0, b1 = u.boundary_slices()
    if not (np.array_equal(b0, problem.u0) and np.array_equal(b1, problem.u1)):
        raise ContractError("field does not match the prescribed boundary slices")


def residual(problem: Problem, u: ScalarField) -> ScalarField:
    """F(M) - eps on interior slices, zero on the boundary slices."""
    _check_boundary(problem, u)
    M = interior_matrices(u)
    res = np.zeros(u.spec.shape)
    res[..., 1:-1] = matrix_value(problem.kind, M) - problem.eps
    return ScalarField(u.spec, res)


def jacobian_apply(problem: Problem, u: ScalarField, w: ScalarField) -> ScalarField:
    """Directional derivative of the residual at u in direction w."""
    b0, b1 = w.boundary_slices()
    if np.any(b0 != 0.0) or np.any(b1 != 0.0):
        raise ContractError("direction field must vanish on the time boundary")
    G = matrix_grad(problem.kind, interior_matrices(u))
    Hw = hessian_blocks(w.values, w.spec)
    out = np.zeros(u.spec.shape)
    out[..., 1:-1] = np.einsum("...ab,...ab->...", G, Hw)
    return ScalarField(u.spec, out)


# ---------------------------------------------------------------------------
# sparse Jacobian on the interior unknowns

def interior_vector(field_values: np.ndarray, spec: GridSpec) -> np.ndarray:
    return field_values[..., 1:-1].ravel()


def insert_interior(vec: np.ndarray, spec: GridSpec,
                    b0: np.ndarray, b1: np.ndarray) -> np.ndarray:
    out = np.empty(spec.shape)
    out[..., 0] = b0
    out[..., -1] = b1
    out[..., 1:-1] = vec.reshape(spec.space_shape + (spec.Nt - 1,))
    return out


def assemble_jacobian(problem: Problem, u: ScalarField) -> sp.csr_matrix:
    """Sparse Jacobian of the interior residual map.

    Stencil neighbors wrap in space; time neighbors on a Dirichlet slice are
    fixed data and contribute nothing.
    """
    spec = u.spec
    n, hx, ht = spec.n, spec.hx, spec.ht
    d = n + 1
    G = matrix_grad(problem.kind, interior_matrices(u))
    dims = spec.space_shape + (spec.Nt - 1,)
    N = int(np.prod(dims))
    idx = np.arange(N).reshape(dims)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    diag = -2.0 * G[..., d - 1, d - 1] / ht**2
    for a in range(n):
        diag = diag - 2.0 * G[..., a, a] / hx**2
    add(idx, idx, diag)

    for a in range(n):
        coef = G[..., a, a] / hx**2
        add(idx, np.roll(idx, -1, axis=a), coef)
        add(idx, np.roll(idx, +1, axis=a), coef)
        for b in range(a + 1, n):
            coef = 2.0 * G[..., a, b] / (4 * hx * hx)
            for sa, sb in itertools.product((-1, 1), repeat=2):
                nb = np.roll(np.roll(idx, -sa, axis=a), -sb, axis=b)
                add(idx, nb, sa * sb * coef)

    t_coef = G[..., d - 1, d - 1] / ht**2
    add(idx[..., :-1], idx[..., 1:], t_coef[..., :-1])
    add(idx[..., 1:], idx[..., :-1], t_coef[..., 1:])

    for a in range(n):
        coef = 2.0 * G[..., a, d - 1] / (4 * hx * ht)
        for sa, sk in itertools.product((-1, 1), repeat=2):
            shifted = np.roll(idx, -sa, axis=a)
            if sk == 1:
                add(idx[..., :-1], shifted[..., 1:], sa * coef[..., :-1])
            else:
                add(idx[..., 1:], shifted[..., :-1], -sa * coef[..., 1:])

    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N))
    return mat.tocsr()
