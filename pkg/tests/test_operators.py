import numpy as np
import pytest

from maxrank.errors import ContractError
from maxrank.grid import Jet2, ScalarField, build_grid
from maxrank.operators import (OperatorKind, Problem, assemble_jacobian,
                               cone_check, f_value, grad_F, interior_vector,
                               jacobian_apply, matrix_grad, matrix_hess, matrix_value,
                               residual)

MA = OperatorKind.MONGE_AMPERE
DON = OperatorKind.DONALDSON


def _jet(n, hess=None):
    d = n + 1
    h = np.zeros((d, d)) if hess is None else np.asarray(hess, float)
    return Jet2(value=0.0, grad=np.zeros(d), hess=h)


def _quad_jet(n):
    # the 2-jet of 1 + t^2
    h = np.zeros((n + 1, n + 1))
    h[n, n] = 2.0
    return _jet(n, h)


def _random_cone_jet(rng, n, kind):
    # draw until strictly inside the ellipticity cone
    while True:
        h = rng.normal(scale=0.4, size=(n + 1, n + 1))
        h = (h + h.T) / 2
        h[n, n] = abs(h[n, n]) + 1.0
        ok, _ = cone_check(kind, _jet(n, h))
        if ok:
            return _jet(n, h)


def test_values_on_reference_jets():
    assert f_value(DON, _quad_jet(2)) == 4.0          # 2 * (2 + 0) - 0 = 2n
    assert f_value(MA, _jet(2)) == 0.0                # det diag(1, 1, 0)
    assert f_value(MA, _quad_jet(2)) == pytest.approx(2.0)


def test_grad_reference_jets():
    g = grad_F(DON, _quad_jet(2))
    assert g[2, 2] == 2.0 and g[0, 0] == g[1, 1] == 2.0
    assert g[0, 1] == g[0, 2] == 0.0
    g = grad_F(MA, _quad_jet(2))
    assert np.allclose(g, np.diag([2.0, 2.0, 1.0]), rtol=0, atol=1e-14)


@pytest.mark.parametrize("kind", [MA, DON])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_grad_matches_finite_differences(kind, n):
    rng = np.random.default_rng(n)
    d = n + 1
    for _ in range(20):
        M = rng.uniform(-1, 1, (d, d))
        E = rng.uniform(-1, 1, (d, d))
        G = matrix_grad(kind, M)
        h = 1e-5
        fd = (matrix_value(kind, M + h * E) - matrix_value(kind, M - h * E)) / (2 * h)
        assert abs(fd - np.sum(G * E)) <= 1e-7 * (1 + abs(fd))


@pytest.mark.parametrize("kind", [MA, DON])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_hess_matches_finite_differences(kind, n):
    rng = np.random.default_rng(10 + n)
    d = n + 1
    for _ in range(20):
        M = rng.uniform(-1, 1, (d, d))
        E = rng.uniform(-1, 1, (d, d))
        H = matrix_hess(kind, M)
        h = 1e-4   # truncation ~ h^2 * f'''' stays below roundoff ~ eps / h^2
        fd = (matrix_value(kind, M + h * E) - 2 * matrix_value(kind, M)
              + matrix_value(kind, M - h * E)) / h**2
        ref = np.einsum("abce,ab,ce->", H, E, E)
        assert abs(fd - ref) <= 1e-6 * (1 + abs(ref))


def test_hess_reference_entries():
    # 2x2 determinant: second derivatives are +-1
    H = matrix_hess(MA, np.zeros((2, 2)))
    assert H[1, 1, 0, 0] == 1.0 and H[1, 0, 0, 1] == -1.0
    # quadratic operator: constant tensor, independent of the point
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3))
    B = rng.normal(size=(3, 3))
    assert np.array_equal(matrix_hess(DON, A), matrix_hess(DON, B))
    H = matrix_hess(DON, A)
    assert H[2, 2, 0, 0] == 1.0 and H[0, 0, 2, 2] == 1.0 and H[0, 2, 0, 2] == -1.0


def test_ma_second_cofactor_swap_sign():
    # the index-swapped second cofactor picks up a sign
    rng = np.random.default_rng(1)
    M = rng.normal(size=(3, 3))
    M = (M + M.T) / 2
    H = matrix_hess(MA, M)
    t, g = 2, 1
    assert H[t, g, g, t] == pytest.approx(-H[t, t, g, g], abs=1e-14)


def test_ma_euler_identity():
    # degree-(n+1) homogeneity of the determinant
    rng = np.random.default_rng(2)
    for n in (1, 2, 3):
        d = n + 1
        for _ in range(30):
            M = rng.normal(size=(d, d))
            M = (M + M.T) / 2
            G = matrix_grad(MA, M)
            lhs = float(np.sum(G * M))
            rhs = d * matrix_value(MA, M)
            assert abs(lhs - rhs) <= 1e-10 * (1 + abs(rhs))


def test_don_grad_psd_exactly_on_cone():
    # positive semidefinite on the closed cone, indefinite off it
    rng = np.random.default_rng(3)
    n = 2
    inside = outside = 0
    while inside < 1000 or outside < 200:
        h = rng.normal(scale=0.5, size=(n + 1, n + 1))
        h = (h + h.T) / 2
        jet = _jet(n, h)
        trace = h[0, 0] + h[1, 1] + n
        eigs = np.linalg.eigvalsh(grad_F(DON, jet))
        if trace >= 0 and f_value(DON, jet) >= 0:
            inside += 1
            assert eigs.min() >= -1e-10
        elif trace > 0 and f_value(DON, jet) < 0 and outside < 200:
            outside += 1
            assert eigs.min() < 0


def test_ma_grad_pd_inside_cone():
    rng = np.random.default_rng(4)
    for _ in range(200):
        jet = _random_cone_jet(rng, 2, MA)
        eigs = np.linalg.eigvalsh(grad_F(MA, jet))
        assert eigs.min() > 0


def test_cone_check_cases():
    assert cone_check(MA, _quad_jet(2))[0]
    assert cone_check(DON, _quad_jet(2))[0]
    h = np.zeros((2, 2))
    h[0, 0] = -1.5
    assert not cone_check(MA, _jet(1, h))[0]
    # tt curvature zero puts the quadratic operator on the cone boundary
    ok, margin = cone_check(DON, _jet(2))
    assert not ok and margin == 0.0


def _flat_problem(kind, n=2, Nx=8, Nt=8, eps=None):
    spec = build_grid(n, Nx, Nt)
    u0 = np.full(spec.space_shape, 1.0)
    u1 = np.full(spec.space_shape, 2.0)
    return Problem(kind, spec, 2.0 * n if eps is None else eps, u0, u1)


def _quad_field(spec):
    tt = np.arange(spec.Nt + 1) * spec.ht
    return ScalarField(spec, np.broadcast_to(1 + tt**2, spec.shape).copy())


def test_residual_zero_on_exact_solution():
    prob = _flat_problem(DON)
    r = residual(prob, _quad_field(prob.spec))
    assert np.abs(r.values).max() == 0.0


def test_residual_affine_in_level():
    prob = _flat_problem(DON)
    shifted = Problem(DON, prob.spec, prob.eps + 1.0, prob.u0, prob.u1)
    r = residual(shifted, _quad_field(prob.spec))
    assert np.allclose(r.values[..., 1:-1], -1.0, rtol=0, atol=0)
    assert not r.values[..., 0].any() and not r.values[..., -1].any()


def test_residual_rejects_boundary_mismatch():
    prob = _flat_problem(DON)
    bad = ScalarField(prob.spec, _quad_field(prob.spec).values + 1.0)
    with pytest.raises(ContractError):
        residual(prob, bad)


def test_jacobian_apply_zero_direction():
    prob = _flat_problem(DON)
    u = _quad_field(prob.spec)
    w = ScalarField(prob.spec, np.zeros(prob.spec.shape))
    assert not jacobian_apply(prob, u, w).values.any()


def test_jacobian_apply_requires_zero_boundary():
    prob = _flat_problem(DON)
    u = _quad_field(prob.spec)
    with pytest.raises(ContractError):
        jacobian_apply(prob, u, u)


def test_jacobian_apply_reference_value():
    # at the quadratic solution, direction t(1-t): interior rows F^tt * (-2)
    prob = _flat_problem(MA, n=2, eps=2.0)
    spec = prob.spec
    u = _quad_field(spec)
    tt = np.arange(spec.Nt + 1) * spec.ht
    w = ScalarField(spec, np.broadcast_to(tt * (1 - tt), spec.shape).copy())
    out = jacobian_apply(prob, u, w)
    assert np.allclose(out.values[..., 1:-1], -2.0, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", [MA, DON])
def test_jacobian_apply_is_residual_derivative(kind):
    prob = _flat_problem(kind, n=2)
    spec = prob.spec
    rng = np.random.default_rng(8)
    base = _quad_field(spec).values + 0.02 * rng.normal(size=spec.shape)
    base[..., 0] = prob.u0
    base[..., -1] = prob.u1
    u = ScalarField(spec, base)
    wv = rng.normal(size=spec.shape)
    wv[..., 0] = 0.0
    wv[..., -1] = 0.0
    # normalize so the direction's discrete Hessian is O(1); otherwise the
    # 1/h^2 stencil amplification makes h * D2w large and the expansion stalls
    from maxrank.grid import hessian_blocks
    wv /= np.abs(hessian_blocks(wv, spec)).max()
    w = ScalarField(spec, wv)
    jw = jacobian_apply(prob, u, w).values
    errs = []
    for h in (8e-3, 4e-3, 2e-3):
        up = ScalarField(spec, u.values + h * wv)
        dn = ScalarField(spec, u.values - h * wv)
        fd = (residual(prob, up).values - residual(prob, dn).values) / (2 * h)
        errs.append(np.abs(fd - jw).max())
    if kind is DON:
        # quadratic operator: the central difference is exact up to the
        # stencil's floating-point noise
        assert max(errs) <= 1e-8
    else:
        assert errs[0] / errs[2] >= 10  # second order in h
    # one-sided expansion: residual(u + h w) = residual(u) + h J w + O(h^2)
    h = 1e-3
    up = ScalarField(spec, u.values + h * wv)
    rem = residual(prob, up).values - residual(prob, u).values - h * jw
    assert np.abs(rem).max() <= 5e-4


@pytest.mark.parametrize("kind", [MA, DON])
def test_assembled_jacobian_matches_apply(kind):
    prob = _flat_problem(kind, n=2)
    spec = prob.spec
    rng = np.random.default_rng(9)
    base = _quad_field(spec).values + 0.02 * rng.normal(size=spec.shape)
    base[..., 0] = prob.u0
    base[..., -1] = prob.u1
    u = ScalarField(spec, base)
    J = assemble_jacobian(prob, u)
    for seed in range(3):
        wv = np.random.default_rng(seed).normal(size=spec.shape)
        wv[..., 0] = 0.0
        wv[..., -1] = 0.0
        w = ScalarField(spec, wv)
        direct = interior_vector(jacobian_apply(prob, u, w).values, spec)
        assembled = J @ interior_vector(wv, spec)
        scale = np.abs(direct).max()
        assert np.abs(direct - assembled).max() <= 1e-12 * (1 + scale)


def test_jacobian_symmetric_for_constant_jets():
    # both operators give pointwise-constant first derivatives on fields with
    # constant Hessian, making the assembled matrix symmetric
    for kind in (MA, DON):
        prob = _flat_problem(kind, n=2)
        spec = prob.spec
        u = _quad_field(spec)
        J = assemble_jacobian(prob, u)
        gap = abs(J - J.T)
        assert gap.max() <= 1e-10
