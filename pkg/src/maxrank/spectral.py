"""Eigen-decomposition of small symmetric matrices and rank test functions.

The eigensolver is cyclic Jacobi, vectorized over a leading stack of
matrices so that per-point decompositions of whole fields stay cheap.
Rank tests are built from elementary symmetric polynomials of the
eigenvalues of the shifted space Hessian.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_SWEEPS = 12
_OFF_TOL = 1e-15


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues with orthonormal eigenvector columns."""

    eigs: np.ndarray
    vecs: np.ndarray


@dataclass(frozen=True)
class RankPartition:
    """Indices split at a threshold: bad = eigenvalue below, good = the rest."""

    good: tuple[int, ...]
    bad: tuple[int, ...]
    threshold: float


def jacobi_eigh(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi on a stack of symmetric d x d matrices, d <= 4.

    Returns (eigs, vecs) with eigenvalues ascending along the last axis and
    eigenvectors as columns.  Off-diagonal mass is annihilated pairwise until
    below machine scale; quadratic convergence makes a fixed sweep budget
    sufficient for d <= 4.
    """
    A = np.array(mats, dtype=np.float64, copy=True)
    d = A.shape[-1]
    if A.shape[-2] != d or d > 4:
        raise ConfigError(f"expected stack of symmetric d<=4 matrices, got {A.shape}")
    lead = A.shape[:-2]
    A = A.reshape(-1, d, d)
    m = A.shape[0]
    V = np.broadcast_to(np.eye(d), (m, d, d)).copy()
    scale = np.maximum(np.abs(A).max(axis=(1, 2)), 1.0)
    for _ in range(_SWEEPS):
        off = 0.0
        for p, q in itertools.combinations(range(d), 2):
            apq = A[:, p, q]
            live = np.abs(apq) > _OFF_TOL * scale
            if not live.any():
                continue
            off = max(off, np.abs(apq[live] / scale[live]).max())
            app = A[:, p, p]
            aqq = A[:, q, q]
            theta = np.zeros(m)
            t = np.zeros(m)
            with np.errstate(divide="ignore", invalid="ignore"):
                theta[live] = 0.5 * (aqq[live] - app[live]) / apq[live]
            t[live] = np.sign(theta[live]) / (np.abs(theta[live])
                                              + np.sqrt(1.0 + theta[live] ** 2))
            t[live & (theta == 0.0)] = 1.0
            c = 1.0 / np.sqrt(1.0 + t**2)
            s = t * c
            c[~live] = 1.0
            s[~live] = 0.0
            rot_p = c[:, None] * A[:, :, p] - s[:, None] * A[:, :, q]
            rot_q = s[:, None] * A[:, :, p] + c[:, None] * A[:, :, q]
            A[:, :, p] = rot_p
            A[:, :, q] = rot_q
            rot_p = c[:, None] * A[:, p, :] - s[:, None] * A[:, q, :]
            rot_q = s[:, None] * A[:, p, :] + c[:, None] * A[:, q, :]
            A[:, p, :] = rot_p
            A[:, q, :] = rot_q
            rot_p = c[:, None] * V[:, :, p] - s[:, None] * V[:, :, q]
            rot_q = s[:, None] * V[:, :, p] + c[:, None] * V[:, :, q]
            V[:, :, p] = rot_p
            V[:, :, q] = rot_q
        if off == 0.0:
            break
    eigs = np.einsum("mii->mi", A).copy()
    order = np.argsort(eigs, axis=1, kind="stable")
    eigs = np.take_along_axis(eigs, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return eigs.reshape(lead + (d,)), V.reshape(lead + (d, d))


def eig_sym(M: np.ndarray) -> Spectrum:
    """Decompose one symmetric d x d matrix (d <= 4)."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {M.shape}")
    if not np.array_equal(M, M.T):
        raise ConfigError("matrix must be exactly symmetric")
    eigs, vecs = jacobi_eigh(M[None])
    return Spectrum(eigs=eigs[0], vecs=vecs[0])


def _sigma(vals, k: int) -> float:
    if k == 0:
        return 1.0
    if k > len(vals):
        return 0.0
    return float(sum(np.prod(c) for c in itertools.combinations(vals, k)))


def elem_sym(vals: np.ndarray, k: int) -> float:
    """k-th elementary symmetric polynomial of the entries of vals."""
    vals = np.asarray(vals, dtype=np.float64)
    if not 0 <= k <= vals.size:
        raise ConfigError(f"order {k} out of range 0..{vals.size}")
    return _sigma(vals, k)


def elem_sym_stack(vals: np.ndarray, k: int) -> np.ndarray:
    """elem_sym along the last axis of a stack."""
    vals = np.asarray(vals, dtype=np.float64)
    nv = vals.shape[-1]
    if k == 0:
        return np.ones(vals.shape[:-1])
    if k > nv:
        return np.zeros(vals.shape[:-1])
    out = np.zeros(vals.shape[:-1])
    for combo in itertools.combinations(range(nv), k):
        out += np.prod(vals[..., list(combo)], axis=-1)
    return out


def rank_test(eigs: np.ndarray, K: int) -> float:
    """Degeneracy detector of order K: vanishes iff at least K eigenvalues do.

    For n eigenvalues this is the elementary symmetric polynomial of degree
    n - K + 1, so every monomial must pick up at least one of the K smallest
    values.
    """
    eigs = np.asarray(eigs, dtype=np.float64)
    n = eigs.size
    if not 1 <= K <= n:
        raise ConfigError(f"multiplicity {K} out of range 1..{n}")
    return _sigma(eigs, n - K + 1)


def rank_test_corrected(eigs: np.ndarray, K: int, floor: float = 1e-12) -> float:
    """Rank test plus the next-order ratio correction.

    Adds the degree-(n-K+2) over degree-(n-K+1) ratio, whose continuous
    extension at the degenerate locus is 0 (the numerator carries two nearly
    vanishing factors, the denominator one).  The floor only guards the
    division; below it the correction is dropped.
    """
    eigs = np.asarray(eigs, dtype=np.float64)
    n = eigs.size
    if not 1 <= K <= n:
        raise ConfigError(f"multiplicity {K} out of range 1..{n}")
    if floor <= 0:
        raise ConfigError("floor must be positive")
    base = _sigma(eigs, n - K + 1)
    if abs(base) < floor:
        return base
    return base + _sigma(eigs, n - K + 2) / base


def partition(eigs: np.ndarray, threshold: float) -> RankPartition:
    """Split indices by eigenvalue below/above the threshold."""
    if threshold <= 0:
        raise ConfigError("threshold must be positive")
    eigs = np.asarray(eigs, dtype=np.float64)
    bad = tuple(int(i) for i in range(eigs.size) if eigs[i] < threshold)
    good = tuple(int(i) for i in range(eigs.size) if eigs[i] >= threshold)
    return RankPartition(good=good, bad=bad, threshold=threshold)


def default_threshold(eigs: np.ndarray) -> float:
    """Scale-aware cutoff separating numerically zero eigenvalues."""
    return 1e-6 * (1.0 + float(np.max(eigs)))
