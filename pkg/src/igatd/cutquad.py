"""Gauss rules on [0, 1] and material fractions of elements cut by the zero level set."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .spline import basis_funs


class GaussRule(NamedTuple):
    points: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return self.points.size


@lru_cache(maxsize=None)
def gauss_rule(order: int) -> GaussRule:
    """Gauss--Legendre rule with ``order`` points mapped to ``[0, 1]``."""
    if not 1 <= order <= 16:
        raise ValueError(f"unsupported Gauss order {order} (need 1..16)")
    x, w = np.polynomial.legendre.leggauss(order)
    pts, wts = 0.5 * (x + 1.0), 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return GaussRule(pts, wts)


# lattice used to sample a quadtree cell, and the linear least-squares fit on it
_LATTICE = np.array([0.0, 0.5, 1.0])
_LX, _LY = (a.ravel() for a in np.meshgrid(_LATTICE, _LATTICE, indexing="ij"))
_FIT = np.linalg.pinv(np.column_stack([np.ones(9), _LX, _LY]))
_DESIGN = np.column_stack([np.ones(9), _LX, _LY])
# relative residual below which the fitted plane is taken as exact
_PLANAR_TOL = 1e-10
_ZERO_TOL = 1e-12


def _triangle_fraction(f1, f2, f3):
    """Fraction of a triangle where a linear function with vertex values f is <= 0."""
    f = np.sort(np.stack([f1, f2, f3], axis=-1), axis=-1)
    lo, mid, hi = f[..., 0], f[..., 1], f[..., 2]
    out = np.zeros_like(lo)
    out[hi <= 0] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (mid <= 0) & (hi > 0)
        out[a] = 1.0 - hi[a] ** 2 / ((hi[a] - lo[a]) * (hi[a] - mid[a]))
        b = (lo <= 0) & (mid > 0)
        out[b] = lo[b] ** 2 / ((mid[b] - lo[b]) * (hi[b] - lo[b]))
    return out


def planar_fraction(c0, cx, cy):
    """Area fraction of the unit square where ``c0 + cx x + cy y <= 0``."""
    f00, f10, f01, f11 = c0, c0 + cx, c0 + cy, c0 + cx + cy
    return 0.5 * (_triangle_fraction(f00, f10, f11) + _triangle_fraction(f00, f11, f01))


def cut_ratios(phi, elements=None, tol: float = 1e-6, max_depth: int = 6) -> np.ndarray:
    """Material fraction ``|e ∩ {phi <= 0}| / |e|`` of elements, in parametric measure.

    Each element is refined as a quadtree. A cell whose samples on a 3x3
    lattice share one sign is counted as full or empty. A mixed cell is cut
    by the plane fitted to its samples once the fit is exact, the cell is
    at ``max_depth``, or its area drops below ``tol``; otherwise it is split.

    Parameters
    ----------
    phi : SplineField
    elements : array_like of shape (k, 2), optional
        Element indices ``(a, b)``; all elements (C order) by default.
    tol : float
        Absolute error target on the ratio.
    max_depth : int
        Maximum quadtree depth.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    space = phi.space
    ne_u, ne_v = space.num_elements
    if elements is None:
        ea, eb = (g.ravel() for g in np.meshgrid(np.arange(ne_u), np.arange(ne_v), indexing="ij"))
    else:
        elements = np.asarray(elements, dtype=int).reshape(-1, 2)
        ea, eb = elements[:, 0], elements[:, 1]
    nsel = ea.size
    area = np.zeros(nsel)
    if nsel == 0:
        return area

    kv_u, kv_v = space.space_u, space.space_v
    bu, bv = kv_u.element_bounds(), kv_v.element_bounds()
    patches = space.element_coefficients(phi.coeffs)[ea, eb]

    cell = np.arange(nsel)
    x0 = np.zeros(nsel)
    y0 = np.zeros(nsel)
    for depth in range(max_depth + 1):
        if cell.size == 0:
            break
        size = 0.5**depth
        a, b = ea[cell], eb[cell]
        xs = bu[a, :1] + (bu[a, 1:] - bu[a, :1]) * (x0[:, None] + size * _LATTICE)
        ys = bv[b, :1] + (bv[b, 1:] - bv[b, :1]) * (y0[:, None] + size * _LATTICE)
        _, nu = basis_funs(kv_u, xs.ravel(), 0, span=np.repeat(kv_u.element_spans[a], 3))
        _, nv = basis_funs(kv_v, ys.ravel(), 0, span=np.repeat(kv_v.element_spans[b], 3))
        nu = nu[:, 0].reshape(cell.size, 3, -1)
        nv = nv[:, 0].reshape(cell.size, 3, -1)
        vals = np.einsum("ksi,kij,ktj->kst", nu, patches[cell], nv).reshape(cell.size, 9)

        material = np.all(vals <= _ZERO_TOL, axis=1)
        void = ~material & np.all(vals >= -_ZERO_TOL, axis=1)
        mixed = ~(material | void)
        np.add.at(area, cell[material], size * size)

        coef = vals[mixed] @ _FIT.T
        resid = np.abs(vals[mixed] - coef @ _DESIGN.T).max(axis=1)
        planar = resid <= _PLANAR_TOL * np.abs(vals[mixed]).max(axis=1)
        if depth == max_depth or size * size <= tol:
            planar[:] = True
        frac = planar_fraction(coef[planar, 0], coef[planar, 1], coef[planar, 2])
        mcell = cell[mixed]
        np.add.at(area, mcell[planar], size * size * frac)

        split = ~planar
        cell = np.repeat(mcell[split], 4)
        half = 0.5 * size
        x0 = np.repeat(x0[mixed][split], 4) + np.tile([0.0, half, 0.0, half], split.sum())
        y0 = np.repeat(y0[mixed][split], 4) + np.tile([0.0, 0.0, half, half], split.sum())
    return np.clip(area, 0.0, 1.0)


def cut_ratio(element, phi, tol: float = 1e-6, max_depth: int = 6) -> float:
    """Material fraction of a single element ``(a, b)``."""
    return float(cut_ratios(phi, [element], tol, max_depth)[0])


def element_alpha(ratio, alpha_out: float, alpha_in: float = 1.0):
    """Material coefficient interpolated linearly in the material fraction."""
    return alpha_out + ratio * (alpha_in - alpha_out)


@dataclass(frozen=True, eq=False)
class MaterialField:
    """Per-element material fraction and coefficient, arrays of shape ``(ne_u, ne_v)``."""

    ratio: np.ndarray
    alpha: np.ndarray
    alpha_in: float
    alpha_out: float


def material_field(
    phi, classes, alpha_out: float, alpha_in: float = 1.0, tol: float = 1e-6, max_depth: int = 6
) -> MaterialField:
    """Material fractions from the element classes; only Cut elements are integrated."""
    from .levelset import ElementClass

    ratio = np.where(classes == ElementClass.INSIDE, 1.0, 0.0)
    cut = np.argwhere(classes == ElementClass.CUT)
    if cut.size:
        ratio[cut[:, 0], cut[:, 1]] = cut_ratios(phi, cut, tol, max_depth)
    return MaterialField(ratio, element_alpha(ratio, alpha_out, alpha_in), float(alpha_in), float(alpha_out))
