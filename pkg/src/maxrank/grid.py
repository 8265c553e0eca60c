"""Discrete slab grid: periodic in space, Dirichlet in time.

The domain is the product of an n-torus (n space axes, each [0,1) with
wraparound) and the unit time interval.  Time slices k=0 and k=Nt carry
Dirichlet data; all differencing happens on the interior slices.  Second
derivatives use centered stencils, so jets are exact on quadratics and
second-order accurate on smooth fields.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, SamplingError

_HEADER = struct.Struct("<4I")  # n, Nx, Nt, reserved (little-endian u32)


@dataclass(frozen=True)
class GridSpec:
    """Lattice sizes for the slab: n space axes of Nx points, Nt time intervals."""

    n: int
    Nx: int
    Nt: int

    @property
    def hx(self) -> float:
        return 1.0 / self.Nx

    @property
    def ht(self) -> float:
        return 1.0 / self.Nt

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.Nx,) * self.n + (self.Nt + 1,)

    @property
    def space_shape(self) -> tuple[int, ...]:
        return (self.Nx,) * self.n

    def interior_times(self) -> range:
        return range(1, self.Nt)


def build_grid(n: int, Nx: int, Nt: int) -> GridSpec:
    """Validate sizes and return the grid spec (hx = 1/Nx, ht = 1/Nt)."""
    if not 1 <= n <= 3:
        raise ConfigError(f"space dimension must be 1..3, got {n}")
    if Nx < 8 or Nt < 8:
        raise ConfigError(f"need at least 8 points per axis, got Nx={Nx}, Nt={Nt}")
    return GridSpec(n=n, Nx=Nx, Nt=Nt)


@dataclass(frozen=True)
class ScalarField:
    """Immutable grid function, indexed (i_1, ..., i_n, k); space wraps mod Nx."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.spec.shape:
            raise ContractError(f"field shape {v.shape} does not match grid {self.spec.shape}")
        if not np.all(np.isfinite(v)):
            raise SamplingError("field contains non-finite values")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.spec, values)

    def boundary_slices(self) -> tuple[np.ndarray, np.ndarray]:
        return self.values[..., 0], self.values[..., self.spec.Nt]


@dataclass(frozen=True)
class Jet2:
    """Value, gradient and exactly-symmetric Hessian of a field at one point.

    Index order is the n space axes first, then time (index n).
    """

    value: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass(frozen=True)
class Jet3:
    """Fully symmetric third-derivative tensor, same index order as Jet2."""

    third: np.ndarray


def sample(spec: GridSpec, f) -> ScalarField:
    """Evaluate f(x, t) at every lattice point; x is an n-vector in [0,1)."""
    vals = np.empty(spec.shape)
    it = np.nditer(vals, flags=["multi_index"], op_flags=["writeonly"])
    for cell in it:
        idx = it.multi_index
        xi = np.array([idx[a] * spec.hx for a in range(spec.n)])
        ti = idx[-1] * spec.ht
        y = f(xi, ti)
        if not np.isfinite(y):
            raise SamplingError(f"non-finite sample {y} at x={xi}, t={ti}")
        cell[...] = y
    return ScalarField(spec, vals)


def sample_space(spec: GridSpec, f) -> np.ndarray:
    """Evaluate a space-only function on the periodic space lattice."""
    vals = np.empty(spec.space_shape)
    it = np.nditer(vals, flags=["multi_index"], op_flags=["writeonly"])
    for cell in it:
        xi = np.array([i * spec.hx for i in it.multi_index])
        y = f(xi)
        if not np.isfinite(y):
            raise SamplingError(f"non-finite sample {y} at x={xi}")
        cell[...] = y
    return vals


def _shift(idx: tuple[int, ...], axis: int, step: int, spec: GridSpec) -> tuple[int, ...]:
    out = list(idx)
    if axis < spec.n:
        out[axis] = (out[axis] + step) % spec.Nx
    else:
        out[-1] = out[-1] + step  # caller guarantees the slice exists
    return tuple(out)


def jet_at(field: ScalarField, point: tuple[int, ...]) -> Jet2:
    """Centered-difference 2-jet at a grid point on an interior time slice."""
    spec = field.spec
    k = point[-1]
    if not 1 <= k <= spec.Nt - 1:
        raise ContractError(f"time index {k} is not interior (1..{spec.Nt - 1})")
    v = field.values
    d = spec.n + 1
    h = np.array([spec.hx] * spec.n + [spec.ht])
    grad = np.empty(d)
    hess = np.empty((d, d))
    u0 = v[point]
    for a in range(d):
        up = v[_shift(point, a, +1, spec)]
        um = v[_shift(point, a, -1, spec)]
        grad[a] = (up - um) / (2 * h[a])
        hess[a, a] = (up - 2 * u0 + um) / h[a] ** 2
    for a in range(d):
        for b in range(a + 1, d):
            pp = v[_shift(_shift(point, a, +1, spec), b, +1, spec)]
            pm = v[_shift(_shift(point, a, +1, spec), b, -1, spec)]
            mp = v[_shift(_shift(point, a, -1, spec), b, +1, spec)]
            mm = v[_shift(_shift(point, a, -1, spec), b, -1, spec)]
            hess[a, b] = hess[b, a] = (pp - pm - mp + mm) / (4 * h[a] * h[b])
    return Jet2(value=float(u0), grad=grad, hess=hess)


def third_jet_at(field: ScalarField, point: tuple[int, ...]) -> Jet3:
    """Symmetrized centered difference of the 2-jet Hessian; exact on cubics."""
    spec = field.spec
    k = point[-1]
    if not 2 <= k <= spec.Nt - 2:
        raise ContractError(f"time index {k} needs margin 2 (2..{spec.Nt - 2})")
    d = spec.n + 1
    h = np.array([spec.hx] * spec.n + [spec.ht])
    raw = np.empty((d, d, d))
    for c in range(d):
        jp = jet_at(field, _shift(point, c, +1, spec))
        jm = jet_at(field, _shift(point, c, -1, spec))
        raw[:, :, c] = (jp.hess - jm.hess) / (2 * h[c])
    # average over index orders once per multiset so the result is symmetric
    # bit for bit, not merely up to rounding
    sym = np.empty((d, d, d))
    for a in range(d):
        for b in range(a, d):
            for c in range(b, d):
                perms = {(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)}
                val = sum(raw[p] for p in sorted(perms)) / len(perms)
                for p in perms:
                    sym[p] = val
    return Jet3(third=sym)


def derived_field(parent: ScalarField, g) -> ScalarField:
    """Pointwise g(jet) on interior slices; boundary slices copy their neighbor."""
    spec = parent.spec
    out = np.empty(spec.shape)
    for k in spec.interior_times():
        it = np.nditer(out[..., k], flags=["multi_index"], op_flags=["writeonly"])
        for cell in it:
            point = it.multi_index + (k,)
            try:
                cell[...] = g(jet_at(parent, point))
            except Exception as exc:
                raise type(exc)(f"{exc} (at grid point {point})") from exc
    out[..., 0] = out[..., 1]
    out[..., spec.Nt] = out[..., spec.Nt - 1]
    return ScalarField(spec, out)


# ---------------------------------------------------------------------------
# whole-grid stencil helpers (shared by the operator and verifier modules)

def hessian_blocks(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """All second differences on interior time slices.

    Returns an array of shape (*space, Nt-1, n+1, n+1); entry [..., a, b] is
    the centered D_ab difference at time indices 1..Nt-1.
    """
    n, hx, ht = spec.n, spec.hx, spec.ht
    d = n + 1
    inner = (slice(None),) * n
    mid = values[inner + (slice(1, -1),)]
    out = np.empty(mid.shape + (d, d))
    out[..., d - 1, d - 1] = (values[inner + (slice(2, None),)] - 2 * mid
                              + values[inner + (slice(None, -2),)]) / ht**2
    for a in range(n):
        up = np.roll(values, -1, axis=a)
        dn = np.roll(values, +1, axis=a)
        out[..., a, a] = (up[inner + (slice(1, -1),)] - 2 * mid
                          + dn[inner + (slice(1, -1),)]) / hx**2
        out[..., a, d - 1] = out[..., d - 1, a] = (
            up[inner + (slice(2, None),)] - up[inner + (slice(None, -2),)]
            - dn[inner + (slice(2, None),)] + dn[inner + (slice(None, -2),)]
        ) / (4 * hx * ht)
        for b in range(a + 1, n):
            upb = np.roll(up, -1, axis=b)
            dnb = np.roll(up, +1, axis=b)
            upd = np.roll(dn, -1, axis=b)
            dnd = np.roll(dn, +1, axis=b)
            out[..., a, b] = out[..., b, a] = (
                upb[inner + (slice(1, -1),)] - dnb[inner + (slice(1, -1),)]
                - upd[inner + (slice(1, -1),)] + dnd[inner + (slice(1, -1),)]
            ) / (4 * hx * hx)
    return out


def space_hessian_blocks(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Periodic space Hessian of a space-only array, shape (*space, n, n)."""
    n, hx = spec.n, spec.hx
    out = np.empty(values.shape + (n, n))
    for a in range(n):
        up = np.roll(values, -1, axis=a)
        dn = np.roll(values, +1, axis=a)
        out[..., a, a] = (up - 2 * values + dn) / hx**2
        for b in range(a + 1, n):
            out[..., a, b] = out[..., b, a] = (
                np.roll(up, -1, axis=b) - np.roll(up, +1, axis=b)
                - np.roll(dn, -1, axis=b) + np.roll(dn, +1, axis=b)
            ) / (4 * hx * hx)
    return out


# ---------------------------------------------------------------------------
# binary dump format

def dump_field(field: ScalarField, path) -> None:
    """Write the field as a 16-byte header plus row-major little-endian f64."""
    spec = field.spec
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(spec.n, spec.Nx, spec.Nt, 0))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field(path) -> ScalarField:
    """Read a field written by dump_field."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ConfigError(f"{path}: truncated header")
        n, Nx, Nt, _ = _HEADER.unpack(head)
        spec = build_grid(n, Nx, Nt)
        raw = np.frombuffer(fh.read(), dtype="<f8")
    expected = Nx**n * (Nt + 1)
    if raw.size != expected:
        raise ConfigError(f"{path}: expected {expected} values, found {raw.size}")
    return ScalarField(spec, raw.reshape(spec.shape).astype(np.float64))
