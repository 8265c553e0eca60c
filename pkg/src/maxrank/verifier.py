"""Numerical verification of the rank statements on solved fields.

All statements are about the shifted space Hessian D2_x u + I_n on interior
time slices: its global minimum eigenvalue should not drop below the floor
carried by the boundary data, its rank should be constant, and for the
quadratic operator it should stay strictly positive.  The probe measures the
differential inequality that drives those statements, without asserting any
particular constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .grid import GridSpec, ScalarField, hessian_blocks, space_hessian_blocks
from .operators import Problem, augment, matrix_grad
from .spectral import default_threshold, elem_sym_stack, jacobi_eigh


@dataclass(frozen=True)
class SpectrumField:
    """Per-point eigendecomposition of the shifted space Hessian (interior)."""

    eigs: np.ndarray = field(repr=False)   # (*space, Nt-1, n), ascending
    vecs: np.ndarray = field(repr=False)   # (*space, Nt-1, n, n)


@dataclass(frozen=True)
class RankReport:
    min_eig: float
    argmin: tuple[int, ...]
    boundary_floor: float
    margin: float
    histogram: dict[int, int]
    threshold: float
    tol: float
    floor_preserved: bool       # min_eig >= boundary floor - tol
    constant_rank: bool         # a single histogram bin
    strictly_positive: bool     # min_eig > 0

    def to_json(self) -> dict:
        return {
            "min_eig": self.min_eig,
            "argmin": list(self.argmin),
            "boundary_floor": self.boundary_floor,
            "margin": self.margin,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "threshold": self.threshold,
            "tol": self.tol,
            "floor_preserved": self.floor_preserved,
            "constant_rank": self.constant_rank,
            "strictly_positive": self.strictly_positive,
        }


@dataclass(frozen=True)
class ProbeReport:
    samples: list[dict]
    sup_ratio: float
    sup_ratio_smallest: float
    floor: float
    order: int
    insufficient: bool

    def to_json(self) -> dict:
        return {
            "samples": self.samples,
            "sup_ratio": self.sup_ratio,
            "sup_ratio_smallest": self.sup_ratio_smallest,
            "floor": self.floor,
            "order": self.order,
            "insufficient": self.insufficient,
        }


def _space_eigs(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    shifted = space_hessian_blocks(values, spec)
    idx = np.arange(spec.n)
    shifted[..., idx, idx] += 1.0
    eigs, _ = jacobi_eigh(shifted)
    return eigs


def boundary_convexity_floor(spec: GridSpec, u0: np.ndarray, u1: np.ndarray) -> float:
    """Smallest eigenvalue of D2_x u + I_n over both Dirichlet slices."""
    u0 = np.asarray(u0, dtype=np.float64)
    u1 = np.asarray(u1, dtype=np.float64)
    if u0.shape != spec.space_shape or u1.shape != spec.space_shape:
        raise ContractError("boundary data must live on the space lattice")
    return float(min(_space_eigs(u0, spec).min(), _space_eigs(u1, spec).min()))


def space_spectrum_field(u: ScalarField) -> SpectrumField:
    """Eigen-decompose D2_x u + I_n at every interior point."""
    spec = u.spec
    n = spec.n
    blocks = hessian_blocks(u.values, spec)[..., :n, :n]
    idx = np.arange(n)
    blocks[..., idx, idx] += 1.0
    eigs, vecs = jacobi_eigh(blocks)
    return SpectrumField(eigs=eigs, vecs=vecs)


def check_theorems(u: ScalarField, problem: Problem, tol: float | None = None) -> RankReport:
    """Compare the interior eigenvalue floor with the boundary one.

    tol defaults to 5 h^2, the scale at which second-order stencils perturb
    eigenvalues.
    """
    spec = u.spec
    if tol is None:
        tol = 5.0 * max(spec.hx, spec.ht) ** 2
    eigs = space_spectrum_field(u).eigs
    low = eigs[..., 0]
    flat_arg = int(np.argmin(low))
    arg = np.unravel_index(flat_arg, low.shape)
    argmin = arg[:-1] + (arg[-1] + 1,)          # back to global time index
    min_eig = float(low[arg])
    floor = boundary_convexity_floor(spec, problem.u0, problem.u1)
    threshold = default_threshold(eigs)
    ranks = (eigs >= threshold).sum(axis=-1)
    hist_vals, hist_counts = np.unique(ranks, return_counts=True)
    histogram = {int(r): int(c) for r, c in zip(hist_vals, hist_counts)}
    return RankReport(
        min_eig=min_eig,
        argmin=tuple(int(i) for i in argmin),
        boundary_floor=floor,
        margin=min_eig - floor,
        histogram=histogram,
        threshold=float(threshold),
        tol=float(tol),
        floor_preserved=min_eig >= floor - tol,
        constant_rank=len(histogram) == 1,
        strictly_positive=min_eig > 0.0,
    )


def rank_test_field(u: ScalarField, K: int) -> ScalarField:
    """Degeneracy-detector field: order-K test of the shifted space eigenvalues.

    The global interior minimum eigenvalue is subtracted first, so the field
    is nonnegative and vanishes exactly where the minimum is attained with
    multiplicity K.  Boundary slices copy their interior neighbor.
    """
    spec = u.spec
    n = spec.n
    if not 1 <= K <= n:
        raise ContractError(f"multiplicity {K} out of range 1..{n}")
    eigs = space_spectrum_field(u).eigs
    mu_min = float(eigs[..., 0].min())
    phi = elem_sym_stack(eigs - mu_min, n - K + 1)
    out = np.empty(spec.shape)
    out[..., 1:-1] = phi
    out[..., 0] = out[..., 1]
    out[..., -1] = out[..., -2]
    return ScalarField(spec, out)


def key_estimate_probe(u: ScalarField, problem: Problem, K: int,
                       floor: float = 1e-12) -> ProbeReport:
    """Measure the elliptic estimate driving the rank statements.

    At probe points (time margin 2) the report holds the ratio of the
    linearized operator applied to the rank-test field over the field plus
    its gradient norm.  The smallest-field one percent of points is listed;
    the estimate's constant is never asserted, only measured.
    """
    spec = u.spec
    n = spec.n
    d = n + 1
    if spec.Nt < 4:
        raise ContractError("probe needs at least two interior slices of margin 2")
    phi_field = rank_test_field(u, K)
    phi_vals = phi_field.values
    # discrete gradient of the test field at margin-2 slices
    core = (slice(None),) * n + (slice(2, -2),)
    grads = []
    for a in range(n):
        grads.append((np.roll(phi_vals, -1, axis=a)[core]
                      - np.roll(phi_vals, +1, axis=a)[core]) / (2 * spec.hx))
    inner = (slice(None),) * n
    grads.append((phi_vals[inner + (slice(3, -1),)]
                  - phi_vals[inner + (slice(1, -3),)]) / (2 * spec.ht))
    grad_norm = np.sqrt(sum(g**2 for g in grads))
    # second differences of the test field never touch the copied boundary
    # slices at margin 2
    phi_hess = hessian_blocks(phi_vals, spec)[inner + (slice(1, -1),)]
    G = matrix_grad(problem.kind, augment(hessian_blocks(u.values, spec), n))
    G = G[inner + (slice(1, -1),)]
    contraction = np.einsum("...ab,...ab->", G.reshape(-1, d, d),
                            phi_hess.reshape(-1, d, d)) if False else \
        np.einsum("...ab,...ab->...", G, phi_hess)
    phi_core = phi_vals[core]
    ratio = contraction / (phi_core + grad_norm + floor)
    count = phi_core.size
    if count < 10:
        return ProbeReport(samples=[], sup_ratio=float("nan"),
                           sup_ratio_smallest=float("nan"), floor=floor,
                           order=K, insufficient=True)
    take = max(1, count // 100)
    flat_phi = phi_core.ravel()
    flat_ratio = ratio.ravel()
    flat_grad = grad_norm.ravel()
    flat_con = contraction.ravel()
    order_idx = np.argsort(flat_phi, kind="stable")[:take]
    samples = []
    for fi in order_idx:
        pt = np.unravel_index(int(fi), phi_core.shape)
        point = pt[:-1] + (pt[-1] + 2,)
        samples.append({
            "point": [int(z) for z in point],
            "phi": float(flat_phi[fi]),
            "grad_norm": float(flat_grad[fi]),
            "operator_value": float(flat_con[fi]),
            "ratio": float(flat_ratio[fi]),
        })
    return ProbeReport(
        samples=samples,
        sup_ratio=float(flat_ratio.max()),
        sup_ratio_smallest=float(flat_ratio[order_idx].max()),
        floor=floor,
        order=K,
        insufficient=False,
    )
