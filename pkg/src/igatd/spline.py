"""B-spline bases on open knot vectors, tensor-product spaces and Greville collocation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# relative tolerance for accepting points marginally outside the parameter domain
_DOMAIN_TOL = 1e-12


class KnotVector:
    """Open knot vector together with a spline degree.

    Parameters
    ----------
    knots : array_like
        Non-decreasing knots. The first and last knot must be repeated
        ``degree + 1`` times.
    degree : int
        Polynomial degree ``p >= 0``.
    """

    def __init__(self, knots, degree: int):
        knots = np.asarray(knots, dtype=float)
        degree = int(degree)
        if degree < 0:
            raise ValueError(f"degree must be >= 0, got {degree}")
        if knots.ndim != 1 or knots.size < 2 * (degree + 1):
            raise ValueError("knot vector too short for the requested degree")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        if np.any(knots[: degree + 1] != knots[0]) or np.any(knots[-degree - 1 :] != knots[-1]):
            raise ValueError("knot vector is not open (end multiplicity must be degree+1)")
        if knots[-1] <= knots[0]:
            raise ValueError("knot vector spans an empty interval")
        knots.setflags(write=False)
        self.knots = knots
        self.degree = degree
        self.breaks = np.unique(knots)
        self.breaks.setflags(write=False)
        # index of the last knot <= left end of every nonzero span
        spans = np.nonzero(np.diff(knots) > 0)[0]
        spans.setflags(write=False)
        self.element_spans = spans

    def __repr__(self):
        return f"KnotVector({self.knots.tolist()!r}, {self.degree})"

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def num_elements(self) -> int:
        return self.element_spans.size

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    def element_bounds(self) -> np.ndarray:
        """``(num_elements, 2)`` array of element end points."""
        return np.column_stack([self.knots[self.element_spans], self.knots[self.element_spans + 1]])

    def find_span(self, x) -> np.ndarray:
        """Span index for each point; the right end point falls into the last span."""
        x = np.asarray(x, dtype=float)
        a, b = self.domain
        tol = _DOMAIN_TOL * (b - a)
        if np.any(x < a - tol) or np.any(x > b + tol):
            raise ValueError(f"evaluation point outside parameter domain [{a}, {b}]")
        span = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(span, self.degree, self.n - 1)

    def element_of(self, x) -> np.ndarray:
        """Element index containing each point (half-open, last element closed)."""
        return np.searchsorted(self.element_spans, self.find_span(x))


def make_open_uniform_knots(num_elements: int, degree: int, domain=(0.0, 1.0)) -> KnotVector:
    """Open knot vector with ``num_elements`` equal spans on ``domain``."""
    if num_elements < 1:
        raise ValueError(f"num_elements must be >= 1, got {num_elements}")
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    a, b = domain
    inner = np.linspace(a, b, num_elements + 1)
    knots = np.concatenate([np.full(degree, a), inner, np.full(degree, b)])
    return KnotVector(knots, degree)


def basis_funs(kv: KnotVector, x, nderiv: int = 0, span=None):
    """Nonzero basis functions and derivatives at an array of points.

    Vectorized Cox--de Boor recursion (triangular scheme); the scheme never
    forms a 0/0 quotient for a nonzero span, which realizes the usual
    convention that such terms vanish.

    Parameters
    ----------
    kv : KnotVector
    x : array_like
        Evaluation points.
    nderiv : int
        Highest derivative order. Orders above the degree come out as zero.
    span : array_like, optional
        Span index per point. Passing the span of a neighbouring element
        evaluates that element's polynomial piece, e.g. on a shared boundary.

    Returns
    -------
    span : ndarray of int, shape ``(npts,)``
    ders : ndarray, shape ``(npts, nderiv + 1, p + 1)``
        ``ders[:, k, r]`` is the ``k``-th derivative of basis ``span - p + r``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = kv.degree
    t = kv.knots
    span = kv.find_span(x) if span is None else np.broadcast_to(np.asarray(span, dtype=int), x.shape)
    npts = x.size
    x = x.ravel()
    span = np.asarray(span).ravel()

    ndu = np.empty((npts, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.empty((npts, p + 1))
    right = np.empty((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((npts, nderiv + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    if nderiv == 0 or p == 0:
        return span, ders

    a = np.zeros((npts, 2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:, 0, :] = 0.0
        a[:, 0, 0] = 1.0
        for k in range(1, min(nderiv, p) + 1):
            d = np.zeros(npts)
            rk = r - k
            pk = p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1

    fac = p
    for k in range(1, min(nderiv, p) + 1):
        ders[:, k, :] *= fac
        fac *= p - k
    return span, ders


class BasisEvaluation(NamedTuple):
    """Nonzero basis functions at a point; ``values[r]`` belongs to basis ``span_index + r``."""

    span_index: int
    values: np.ndarray
    derivatives: np.ndarray | None


def eval_basis(kv: KnotVector, xi: float, deriv_order: int = 0) -> BasisEvaluation:
    """Nonzero basis functions at a single point.

    ``span_index`` is the index of the first nonzero basis function, which
    for knots without repeated interior values is the element index.
    ``derivatives`` has shape ``(deriv_order, p + 1)`` holding orders
    ``1..deriv_order``, or is ``None`` when ``deriv_order == 0``.
    """
    if deriv_order < 0 or deriv_order > kv.degree:
        raise ValueError(f"deriv_order must be in [0, {kv.degree}]")
    span, ders = basis_funs(kv, [xi], deriv_order)
    derivs = ders[0, 1:].copy() if deriv_order else None
    return BasisEvaluation(int(span[0]) - kv.degree, ders[0, 0].copy(), derivs)


def greville_abscissae(kv: KnotVector) -> np.ndarray:
    """Knot averages ``(t[i+1] + ... + t[i+p]) / p``."""
    p = kv.degree
    if p < 1:
        raise ValueError("Greville abscissae need degree >= 1")
    t = kv.knots
    g = np.array([t[i + 1 : i + p + 1].sum() / p for i in range(kv.n)])
    # kill round-off so that points on breaks stay exactly on them
    a, b = kv.domain
    return np.clip(g, a, b)


def collocation_matrix(kv: KnotVector, x, nderiv: int = 0) -> sp.csr_matrix:
    """Sparse matrix ``A[k, i] = d^nderiv B_i(x_k)``."""
    x = np.asarray(x, dtype=float)
    span, ders = basis_funs(kv, x, nderiv)
    p = kv.degree
    rows = np.repeat(np.arange(x.size), p + 1)
    cols = (span[:, None] - p + np.arange(p + 1)).ravel()
    return sp.csr_matrix((ders[:, nderiv, :].ravel(), (rows, cols)), shape=(x.size, kv.n))


@dataclass(frozen=True, eq=False)
class TensorSpace:
    """Tensor product of two univariate spline spaces.

    Coefficient grids have shape ``dims == (n, m)`` and are flattened in C
    order, so scalar index ``i * m + j`` refers to ``B_i(xi) B_j(eta)``.
    """

    space_u: KnotVector
    space_v: KnotVector

    @property
    def dims(self) -> tuple[int, int]:
        return self.space_u.n, self.space_v.n

    @property
    def size(self) -> int:
        return self.space_u.n * self.space_v.n

    @property
    def degrees(self) -> tuple[int, int]:
        return self.space_u.degree, self.space_v.degree

    @property
    def num_elements(self) -> tuple[int, int]:
        return self.space_u.num_elements, self.space_v.num_elements

    def greville_grid(self) -> tuple[np.ndarray, np.ndarray]:
        return greville_abscissae(self.space_u), greville_abscissae(self.space_v)

    def element_dofs(self) -> np.ndarray:
        """Flat indices of the nonzero basis functions on every element.

        Shape ``(ne_u, ne_v, (p+1) * (q+1))``, ordered like the einsum
        ``'...i,...j->...ij'`` of the 1D local bases.
        """
        p, q = self.degrees
        m = self.space_v.n
        iu = self.space_u.element_spans[:, None] - p + np.arange(p + 1)
        jv = self.space_v.element_spans[:, None] - q + np.arange(q + 1)
        idx = iu[:, None, :, None] * m + jv[None, :, None, :]
        return idx.reshape(iu.shape[0], jv.shape[0], -1)

    def element_basis(self, local_points, nderiv: int = 1):
        """Per-direction local basis on every element at reference points.

        Parameters
        ----------
        local_points : array_like
            Points in ``[0, 1]`` mapped affinely into each element.

        Returns
        -------
        (pts_u, ders_u), (pts_v, ders_v)
            ``pts_*`` have shape ``(ne, npts)`` (parametric coordinates) and
            ``ders_*`` shape ``(ne, npts, nderiv + 1, p + 1)``.
        """
        s = np.asarray(local_points, dtype=float)
        out = []
        for kv in (self.space_u, self.space_v):
            bounds = kv.element_bounds()
            pts = bounds[:, :1] + (bounds[:, 1:] - bounds[:, :1]) * s[None, :]
            spans = np.repeat(kv.element_spans, s.size)
            _, ders = basis_funs(kv, pts.ravel(), nderiv, span=spans)
            out.append((pts, ders.reshape(kv.num_elements, s.size, nderiv + 1, kv.degree + 1)))
        return tuple(out)

    def element_coefficients(self, coeffs) -> np.ndarray:
        """Local coefficient patches ``(ne_u, ne_v, p+1, q+1)`` of a scalar field."""
        c = np.asarray(coeffs, dtype=float).reshape(self.dims)
        p, q = self.degrees
        iu = self.space_u.element_spans[:, None] - p + np.arange(p + 1)
        jv = self.space_v.element_spans[:, None] - q + np.arange(q + 1)
        return c[iu[:, None, :, None], jv[None, :, None, :]]


def eval_field(space: TensorSpace, coeffs, xi, eta, deriv=(0, 0), elements=None):
    """Evaluate ``sum_ij B_i(xi) B_j(eta) c_ij`` (or a partial derivative).

    Parameters
    ----------
    coeffs : array_like, shape ``dims`` or flat
    xi, eta : array_like
        Points (broadcast against each other).
    deriv : (int, int)
        Parametric derivative orders in ``xi`` and ``eta``.
    elements : (array_like, array_like), optional
        Element indices per direction; evaluates that element's polynomial
        piece even when the point sits on an element boundary.
    """
    xi, eta = np.broadcast_arrays(np.asarray(xi, dtype=float), np.asarray(eta, dtype=float))
    shape = xi.shape
    n, m = space.dims
    c = np.asarray(coeffs, dtype=float).reshape(n, m)
    ku, kv_ = space.space_u, space.space_v
    spans = (None, None)
    if elements is not None:
        eu, ev = np.broadcast_arrays(*[np.asarray(e, dtype=int) for e in elements])
        spans = (ku.element_spans[eu.ravel()], kv_.element_spans[ev.ravel()])
    su, bu = basis_funs(ku, xi.ravel(), deriv[0], span=spans[0])
    sv, bv = basis_funs(kv_, eta.ravel(), deriv[1], span=spans[1])
    p, q = space.degrees
    iu = su[:, None] - p + np.arange(p + 1)
    jv = sv[:, None] - q + np.arange(q + 1)
    local = c[iu[:, :, None], jv[:, None, :]]
    val = np.einsum("ki,kij,kj->k", bu[:, deriv[0]], local, bv[:, deriv[1]])
    return val.reshape(shape) if shape else float(val[0])


@dataclass(frozen=True, eq=False)
class SplineField:
    """Scalar field in a tensor-product spline space."""

    space: TensorSpace
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(self.space.dims)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, xi, eta, deriv=(0, 0)):
        return eval_field(self.space, self.coeffs, xi, eta, deriv)


class CollocationSystem:
    """Factorized Greville collocation operator of a tensor-product space.

    The 2D collocation matrix is the Kronecker product of two banded 1D
    matrices, so interpolation reduces to two sets of 1D solves.
    """

    def __init__(self, space: TensorSpace):
        if min(space.degrees) < 1:
            raise ValueError("collocation at Greville points needs degree >= 1")
        self.space = space
        self.points = space.greville_grid()
        self.matrices = []
        self._lu = []
        for kv, g in zip((space.space_u, space.space_v), self.points):
            a = collocation_matrix(kv, g).tocsc()
            lu = spla.splu(a)
            diag = np.abs(lu.U.diagonal())
            if diag.min() <= 1e-14 * diag.max():
                raise np.linalg.LinAlgError("singular Greville collocation matrix")
            self.matrices.append(a)
            self._lu.append(lu)

    def apply(self, coeffs) -> np.ndarray:
        """Values of the field with coefficient grid ``coeffs`` at the Greville grid."""
        c = np.asarray(coeffs, dtype=float).reshape(self.space.dims)
        au, av = self.matrices
        return np.asarray(au @ (av @ c.T).T)

    def solve(self, values) -> np.ndarray:
        """Coefficient grid interpolating ``values`` at the Greville grid."""
        v = np.asarray(values, dtype=float)
        if v.shape != self.space.dims:
            raise ValueError(f"expected values of shape {self.space.dims}, got {v.shape}")
        lu_u, lu_v = self._lu
        tmp = lu_u.solve(v)
        return lu_v.solve(np.ascontiguousarray(tmp.T)).T.copy()

    def interpolate(self, func) -> np.ndarray:
        """Coefficients interpolating ``func(xi, eta)`` at the Greville grid."""
        gu, gv = self.points
        xi, eta = np.meshgrid(gu, gv, indexing="ij")
        return self.solve(np.asarray(func(xi, eta), dtype=float) * np.ones_like(xi))


def build_collocation_system(space: TensorSpace) -> CollocationSystem:
    return CollocationSystem(space)


def make_space(num_elements, degree: int, domain=((0.0, 1.0), (0.0, 1.0))) -> TensorSpace:
    """Open uniform tensor space; ``num_elements`` is an int or a pair."""
    ne = (num_elements, num_elements) if np.isscalar(num_elements) else tuple(num_elements)
    return TensorSpace(
        make_open_uniform_knots(int(ne[0]), degree, domain[0]),
        make_open_uniform_knots(int(ne[1]), degree, domain[1]),
    )
