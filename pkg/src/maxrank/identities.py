"""Brute-force verification of the pointwise third-derivative identities.

Each check draws a synthetic jet at a degenerate point, written in the frame
where the space Hessian is diagonal.  The jet satisfies the equation exactly
and the once-differentiated equation in every degenerate direction (the time
second and third derivatives are solved for, never drawn).  In exact mode the
degenerate eigenvalues are exactly zero and every third derivative carrying
two degenerate space indices is zeroed; this kills all remainder terms of the
identities pointwise, so both sides must agree to rounding.  Scaled mode
multiplies those same quantities by a small delta instead, which makes each
residual term first order in delta (the delta-ladder checks).

Index convention: space indices 0..n-1, time index n.  ``gaps`` holds the
eigenvalues of the shifted space Hessian (distance of each eigenvalue of
D2_x u + I above the global floor), so the diagonal entries of the augmented
Hessian are gaps + floor.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, SamplingError
from .operators import OperatorKind, matrix_grad, matrix_hess, matrix_value
from .spectral import elem_sym

_PIVOT_MIN = 1e-3
_MAX_RESAMPLE = 100


@dataclass(frozen=True)
class JetSample:
    """A constrained degenerate jet in the diagonal frame."""

    n: int
    kind: OperatorKind
    good: tuple[int, ...]
    bad: tuple[int, ...]
    eig_floor: float            # global minimum eigenvalue of D2u + I
    eps: float
    gaps: np.ndarray            # eigenvalues above the floor; zero on bad indices (exact mode)
    u_t: np.ndarray             # mixed space-time second derivatives
    u_tt: float
    third: np.ndarray = field(repr=False)   # fully symmetric (n+1)^3 tensor
    M: np.ndarray = field(repr=False)       # augmented Hessian D2u + I'
    delta: float = 0.0
    seed: int = 0

    @property
    def t(self) -> int:
        return self.n


def _resolve_floor(kind: OperatorKind, num_good: int, n: int,
                   eig_floor, draw: float) -> float:
    if isinstance(eig_floor, (int, float)):
        return float(eig_floor)
    if eig_floor == "uniform":
        return 0.5 * draw
    if eig_floor != "auto":
        raise ContractError(f"unknown eig_floor policy {eig_floor!r}")
    if kind is OperatorKind.MONGE_AMPERE:
        return 0.5 * draw
    # quadratic kind: the degenerate analysis fixes the floor at zero, but a
    # fully degenerate space Hessian would put the jet outside the cone, so
    # the all-bad case keeps a positive floor.
    if num_good >= 1:
        return 0.0
    return 0.05 + 0.45 * draw


def sample_jet(n: int, num_good: int, kind: OperatorKind, mode: str = "exact",
               seed: int = 0, delta: float = 0.0, eig_floor="auto",
               eps: float | None = None) -> JetSample:
    """Draw a constrained jet; deterministic per seed.

    mode is "exact" or "scaled"; scaled mode requires 0 < delta <= 0.1 and
    reuses the same underlying draws, so a fixed seed yields samples that
    depend smoothly on delta.
    """
    if not 0 <= num_good <= n:
        raise ContractError(f"num_good {num_good} out of range 0..{n}")
    if n > 4:
        raise ContractError("space dimension capped at 4")
    if mode == "exact":
        delta = 0.0
    elif mode == "scaled":
        if not 0.0 < delta <= 0.1:
            raise ContractError(f"scaled mode needs 0 < delta <= 0.1, got {delta}")
    else:
        raise ContractError(f"mode must be 'exact' or 'scaled', got {mode!r}")

    rng = np.random.default_rng(seed)
    t = n
    d = n + 1
    bad = tuple(range(n - num_good))
    good = tuple(range(n - num_good, n))
    multisets = list(itertools.combinations_with_replacement(range(d), 3))
    for _ in range(_MAX_RESAMPLE):
        good_draw = rng.uniform(0.5, 2.0, n)
        bad_draw = rng.uniform(0.1, 1.0, n)
        floor_draw = rng.uniform()
        eps_draw = rng.uniform(0.5, 2.0)
        u_t = rng.uniform(-1.0, 1.0, n)
        third_draw = rng.uniform(-1.0, 1.0, len(multisets))
        floor = _resolve_floor(kind, num_good, n, eig_floor, floor_draw)
        # the determinant closure divides by the degenerate diagonal entries,
        # so reject floors too close to zero (delta-independent rule)
        if kind is OperatorKind.MONGE_AMPERE and bad and floor < _PIVOT_MIN:
            continue
        break
    else:
        raise SamplingError("no usable floor after resampling")

    e = float(eps) if eps is not None else eps_draw
    gaps = np.where(np.isin(np.arange(n), good), good_draw, delta * bad_draw)
    third = np.zeros((d, d, d))
    for ms, val in zip(multisets, third_draw):
        if sum(1 for z in ms if z in bad) >= 2:
            val *= delta
        for p in set(itertools.permutations(ms)):
            third[p] = val
    M = np.zeros((d, d))
    for i in range(n):
        M[i, i] = gaps[i] + floor
        M[i, t] = M[t, i] = u_t[i]
    diag = gaps + floor
    if kind is OperatorKind.DONALDSON:
        u_tt = (e + float(u_t @ u_t)) / float(diag.sum())
    else:
        u_tt = e / float(np.prod(diag)) + float((u_t**2 / diag).sum())
    M[t, t] = u_tt
    grad = matrix_grad(kind, M)
    for m in bad:
        acc = float(np.sum(grad * third[:, :, m])) - grad[t, t] * third[t, t, m]
        val = -acc / grad[t, t]
        third[t, t, m] = third[t, m, t] = third[m, t, t] = val
    return JetSample(n=n, kind=kind, good=good, bad=bad, eig_floor=floor, eps=e,
                     gaps=gaps, u_t=u_t, u_tt=u_tt, third=third, M=M,
                     delta=delta, seed=seed)


def _require(s: JetSample, kind: OperatorKind, num_good=None):
    if s.kind is not kind:
        raise ContractError(f"check needs {kind.value} samples, got {s.kind.value}")
    if num_good is not None and len(s.good) not in num_good:
        raise ContractError(f"check needs #good in {sorted(num_good)}, got {len(s.good)}")


def _rel(lhs: float, rhs: float) -> float:
    return abs(lhs - rhs) / (1.0 + abs(lhs))


# ---------------------------------------------------------------------------
# determinant operator, one good direction

def check_cross_term(s: JetSample) -> float:
    """Cross-derivative quadratic form written through second cofactors.

    With one good direction g, contracting the first derivatives of F with
    the mixed third derivatives u_mg. equals the second-cofactor expression
    (1+u_gg) * (F^{tt,gg} u_tgm^2 + 2 sum_B F^{it,gg} u_mgi u_mgt
                - sum_{a,b != g} F^{ab,gg} u_mgg u_abm)
    up to remainder terms that vanish on exact-mode samples.
    """
    _require(s, OperatorKind.MONGE_AMPERE, num_good={1})
    g = s.good[0]
    t = s.t
    d = s.n + 1
    grad = matrix_grad(s.kind, s.M)
    hess = matrix_hess(s.kind, s.M)
    one_ugg = s.M[g, g]
    worst = 0.0
    for m in s.bad:
        umg = s.third[m, g, :]
        lhs = float(umg @ grad @ umg)
        rhs = one_ugg * (hess[t, t, g, g] * s.third[t, g, m] ** 2
                         + 2 * sum(hess[i, t, g, g] * s.third[m, g, i] * s.third[m, g, t]
                                   for i in s.bad))
        rhs -= one_ugg * sum(hess[a, b, g, g] * s.third[m, g, g] * s.third[a, b, m]
                             for a in range(d) for b in range(d)
                             if a != g and b != g)
        worst = max(worst, _rel(lhs, rhs))
    return worst


def check_contraction_split(s: JetSample) -> float:
    """Full second-derivative contraction split along the good direction.

    sum F^{ab,ce} u_abm u_cem equals twice the (gg)-column part minus twice
    the explicit good-time block, modulo vanishing remainders.
    """
    _require(s, OperatorKind.MONGE_AMPERE, num_good={1})
    g = s.good[0]
    t = s.t
    hess = matrix_hess(s.kind, s.M)
    worst = 0.0
    for m in s.bad:
        T = s.third[:, :, m]
        lhs = float(np.einsum("abce,ab,ce->", hess, T, T))
        rhs = 2.0 * float(np.sum(hess[:, :, g, g] * T)) * s.third[g, g, m]
        rhs -= 2.0 * (hess[t, t, g, g] * s.third[t, m, g] ** 2
                      + 2 * sum(hess[i, t, g, g] * s.third[i, g, m] * s.third[g, t, m]
                                for i in s.bad))
        worst = max(worst, _rel(lhs, rhs))
    return worst


def check_reduction(s: JetSample) -> tuple[float, bool]:
    """Reduction of the cross form to the full contraction, and its sign.

    The two previous identities combine to
        sum F^{ab} u_mga u_mgb = -(1+u_gg)/2 * sum F^{ab,ce} u_abm u_cem,
    which forces the contraction on the right to be nonpositive wherever the
    first-derivative matrix of F is positive semidefinite.
    """
    _require(s, OperatorKind.MONGE_AMPERE, num_good={1})
    g = s.good[0]
    grad = matrix_grad(s.kind, s.M)
    hess = matrix_hess(s.kind, s.M)
    one_ugg = s.M[g, g]
    worst = 0.0
    sign_ok = True
    for m in s.bad:
        umg = s.third[m, g, :]
        T = s.third[:, :, m]
        lhs = float(umg @ grad @ umg)
        contraction = float(np.einsum("abce,ab,ce->", hess, T, T))
        rhs = -0.5 * one_ugg * contraction
        worst = max(worst, _rel(lhs, rhs))
        sign_ok = sign_ok and contraction <= 1e-12 * (1.0 + abs(lhs))
    return worst, sign_ok


def check_full_degeneracy(s: JetSample) -> float:
    """Fully degenerate case: the time-time cofactor and its space derivative.

    The time-time cofactor is the determinant of the space block, hence a
    polynomial in the floor with elementary symmetric coefficients; its
    derivative along a degenerate direction must vanish on exact samples.
    """
    _require(s, OperatorKind.MONGE_AMPERE, num_good={0})
    n, t = s.n, s.t
    grad = matrix_grad(s.kind, s.M)
    ftt = grad[t, t]
    expansion = sum(elem_sym(s.gaps, n - p) * s.eig_floor**p for p in range(n + 1))
    worst = _rel(ftt, expansion)
    space_adj = matrix_grad(s.kind, s.M[:n, :n])
    for m in s.bad:
        deriv = float(np.sum(space_adj * s.third[:n, :n, m]))
        worst = max(worst, abs(deriv) / (1.0 + abs(ftt)))
    return worst


# ---------------------------------------------------------------------------
# quadratic operator: the per-bad-direction propagation form

@dataclass(frozen=True)
class DegeneracyForms:
    """Four independent evaluations of the propagation form per bad index.

    forms[m] = (direct, regrouped, split_squares, square_sum); square_sum is
    only meaningful with exactly two good directions, where the trace
    constraint it uses holds.  groups[m] are the three nonnegative square
    groups of the square_sum evaluation.
    """

    forms: dict[int, tuple[float, float, float, float]]
    groups: dict[int, tuple[float, float, float]]
    max_pairwise: float


def _propagation_pieces(s: JetSample, m: int):
    n, t = s.n, s.t
    G = s.good
    T, ut, utt, eps = s.third, s.u_t, s.u_tt, s.eps
    one_u = {j: s.M[j, j] for j in range(n)}           # 1 + u_jj
    ndel = sum(one_u.values())                          # n + laplacian
    du_m = sum(T[j, j, m] for j in range(n))

    direct = (T[t, t, m] * du_m
              - sum(T[k, t, m] ** 2 for k in G)
              + utt * sum(T[m, j, k] ** 2 / one_u[j] for j in G for k in G)
              + ndel * sum(T[m, j, t] ** 2 / one_u[j] for j in G)
              - 2 * sum(ut[k] * T[t, j, m] * T[m, j, k] / one_u[j]
                        for j in G for k in G))

    pairs = [(j, k) for j in G for k in G if j != k]
    a_part = (utt / (2 * ndel) * sum(
        (one_u[k] * T[j, j, m] - one_u[j] * T[k, k, m]) ** 2 / (one_u[j] * one_u[k])
        for j, k in pairs)
        + utt * sum(T[m, j, k] ** 2 / one_u[j] for j, k in pairs))
    b_part = (-2 * sum(ut[j] * T[t, j, m] / (one_u[j] * ndel)
                       * (T[j, j, m] * one_u[k] - T[k, k, m] * one_u[j])
                       for j, k in pairs)
              - 2 * sum(ut[k] * T[t, j, m] * T[m, j, k] / one_u[j] for j, k in pairs))
    c_part = sum(T[m, j, t] ** 2 * (ndel / one_u[j] - 1) for j in G)
    regrouped = a_part + b_part + c_part

    s1 = 0.5 * sum(
        (np.sqrt(utt / (one_u[j] * one_u[k] * ndel))
         * (one_u[k] * T[j, j, m] - one_u[j] * T[k, k, m])
         + (ut[k] * T[t, k, m] / one_u[k] - ut[j] * T[t, j, m] / one_u[j])
         * np.sqrt(one_u[j] * one_u[k] / (utt * ndel))) ** 2
        for j, k in pairs)
    s2 = 0.5 * sum(
        (T[t, j, m] * ut[k] * one_u[k] + T[t, k, m] * ut[j] * one_u[j]) ** 2
        / (one_u[j] * one_u[k] * utt * ndel)
        for j, k in pairs)
    s3 = sum(T[m, j, t] ** 2 / (utt * ndel)
             * sum(one_u[k] / one_u[j]
                   * (sum(ut[l] ** 2 for l in range(n) if l not in (j, k)) + eps)
                   for k in range(n) if k != j)
             for j in G)
    e_plain = (utt * sum(T[m, j, k] ** 2 / one_u[j] for j, k in pairs)
               - 2 * sum(ut[k] * T[t, j, m] * T[m, j, k] / one_u[j]
                         for j, k in pairs))
    split_squares = s1 + s2 + s3 + e_plain

    e_sq = 0.5 * sum(
        (T[m, j, k] * np.sqrt(ndel * utt)
         - (ut[k] * T[t, j, m] * one_u[k] + ut[j] * T[t, k, m] * one_u[j])
         / np.sqrt(utt * ndel)) ** 2 / (one_u[j] * one_u[k])
        for j, k in pairs)
    square_sum = s1 + e_sq + s3
    return direct, regrouped, split_squares, square_sum, (s1, e_sq, s3)


def degeneracy_forms(s: JetSample) -> DegeneracyForms:
    """Evaluate all closed forms of the propagation form independently.

    Requires the quadratic operator at floor zero with at most two good
    directions (three are accepted for sign reporting only; the square_sum
    form is then excluded from the agreement figure).
    """
    _require(s, OperatorKind.DONALDSON)
    if len(s.good) >= 1 and s.eig_floor != 0.0:
        raise ContractError("propagation forms are derived at floor zero")
    forms = {}
    groups = {}
    worst = 0.0
    for m in s.bad:
        direct, regrouped, split_sq, square_sum, grp = _propagation_pieces(s, m)
        forms[m] = (direct, regrouped, split_sq, square_sum)
        groups[m] = grp
        compare = [direct, regrouped, split_sq]
        if len(s.good) == 2:
            compare.append(square_sum)
        scale = 1.0 + abs(direct)
        for x, y in itertools.combinations(compare, 2):
            worst = max(worst, abs(x - y) / scale)
    return DegeneracyForms(forms=forms, groups=groups, max_pairwise=worst)


def check_form_nonneg(s: JetSample) -> tuple[float, bool]:
    """Nonnegativity of the propagation form via its manifestly square shape.

    With two good directions the square_sum form applies; with fewer, the
    form collapses to the remaining explicitly nonnegative tail.
    """
    _require(s, OperatorKind.DONALDSON)
    if not s.bad:
        return 0.0, True
    worst = np.inf
    ok = True
    for m in s.bad:
        direct, _, _, square_sum, grp = _propagation_pieces(s, m)
        if len(s.good) == 2:
            val = square_sum
        else:
            val = grp[2]        # the residual tail; squares are empty below two
        worst = min(worst, val)
        ok = ok and val >= -1e-12 * (1.0 + abs(direct))
    return float(worst), ok


def check_floor_gap_nonneg(s: JetSample) -> tuple[float, bool]:
    """The term produced by lifting the floor is a psd quadratic form.

    Each good direction contributes (1/v_jj - 1/(1+u_jj)) >= 0 times the
    first-derivative matrix applied to a mixed third-derivative vector.
    """
    _require(s, OperatorKind.DONALDSON)
    grad = matrix_grad(s.kind, s.M)
    worst = np.inf if s.bad else 0.0
    for m in s.bad:
        total = 0.0
        for j in s.good:
            gap = s.gaps[j]
            weight = 1.0 / gap - 1.0 / s.M[j, j]
            vec = s.third[m, j, :]
            total += weight * float(vec @ grad @ vec)
        worst = min(worst, total)
    return float(worst), bool(worst >= -1e-12)


@dataclass(frozen=True)
class RatioCorrectionReport:
    """Ingredients of the corrected rank test's extra term.

    diag_mix[i, a] couples the derivative of one degenerate eigenvalue to the
    derivative of their sum; the correction contracts these against the
    first-derivative matrix and is nonnegative whenever that matrix is psd.
    Brackets are reported for finiteness only.
    """

    diag_mix: np.ndarray
    correction: float
    brackets: dict[int, float]


def ratio_correction_report(s: JetSample, floor: float = 1e-12) -> RatioCorrectionReport:
    _require(s, OperatorKind.DONALDSON)
    bad = list(s.bad)
    sigma1_bad = float(sum(s.gaps[i] for i in bad))
    if sigma1_bad < floor:
        raise SamplingError("degenerate eigenvalue sum below floor; use scaled samples")
    d = s.n + 1
    grad = matrix_grad(s.kind, s.M)
    V = np.zeros((len(bad), d))
    for r, i in enumerate(bad):
        u_ii = s.M[i, i] - 1.0
        for a in range(d):
            V[r, a] = (s.third[i, i, a] * sigma1_bad
                       - u_ii * sum(s.third[j, j, a] for j in bad))
    correction = float(np.einsum("ab,ra,rb->", grad, V, V)) / sigma1_bad**3
    for i in bad:
        for j in bad:
            if i != j:
                vi = s.third[i, j, :]
                correction += float(vi @ grad @ vi) / sigma1_bad
    brackets = {}
    sigma1_good = float(sum(s.gaps[g] for g in s.good))
    for m in bad:
        rest = [s.gaps[i] for i in bad if i != m]
        s1 = sum(rest)
        s2 = sum(a * b for a, b in itertools.combinations(rest, 2))
        brackets[m] = sigma1_good + (s1**2 - s2) / sigma1_bad**2
    return RatioCorrectionReport(diag_mix=V, correction=correction, brackets=brackets)


# ---------------------------------------------------------------------------
# sample self-consistency and ladder utilities

def verify_sample(s: JetSample, tol: float = 1e-10) -> None:
    """Assert the closures actually hold (equation and differentiated equation)."""
    val = float(matrix_value(s.kind, s.M))
    if abs(val - s.eps) > tol * (1.0 + abs(val)):
        raise SamplingError(f"equation closure violated: {val} vs {s.eps}")
    grad = matrix_grad(s.kind, s.M)
    for m in s.bad:
        r = float(np.sum(grad * s.third[:, :, m]))
        if abs(r) > tol * (1.0 + float(np.abs(grad).max())):
            raise SamplingError(f"differentiated-equation closure violated at {m}: {r}")


def ladder_slope(values_by_delta: dict[float, float]) -> float:
    """Least-squares slope of log(discrepancy) against log(delta)."""
    deltas = sorted(values_by_delta)
    x = np.log(np.array(deltas))
    y = np.log(np.array([max(values_by_delta[dl], 1e-300) for dl in deltas]))
    slope = float(np.polyfit(x, y, 1)[0])
    return slope


def median_ladder_slope(check, n: int, num_good: int, kind: OperatorKind,
                        deltas=(1e-2, 1e-3, 1e-4), seeds: int = 60) -> float:
    """Median over seeds of the per-seed delta-ladder slope.

    Matched draws make each seed's discrepancy a smooth function of delta, so
    the per-seed log-log slope is a clean first-order reading; the median
    discards seeds whose leading coefficient happens to nearly cancel.
    """
    slopes = []
    for seed in range(seeds):
        vals = {dl: float(check(sample_jet(n, num_good, kind, "scaled",
                                           seed=seed, delta=dl)))
                for dl in deltas}
        slopes.append(ladder_slope(vals))
    return float(np.median(slopes))
