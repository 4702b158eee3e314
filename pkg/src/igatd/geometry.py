"""Analytic maps from the parametric square to the benchmark domains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cutquad import gauss_rule

_TOL = 1e-12


def _check_unit_square(xi, eta):
    if np.any(xi < -_TOL) or np.any(xi > 1 + _TOL) or np.any(eta < -_TOL) or np.any(eta > 1 + _TOL):
        raise ValueError("parametric point outside [0, 1]^2")


class GeometryMap:
    """Base class; subclasses implement ``_map`` and ``_jacobian``."""

    def map_point(self, xi, eta):
        """Physical coordinates ``(x, y)`` of parametric points."""
        xi, eta = np.broadcast_arrays(np.asarray(xi, dtype=float), np.asarray(eta, dtype=float))
        _check_unit_square(xi, eta)
        return self._map(xi, eta)

    def jacobian(self, xi, eta):
        """Jacobian ``d(x, y)/d(xi, eta)`` with shape ``(..., 2, 2)`` and the area factor.

        The second return value is ``|det J|``, the factor converting
        parametric to physical area. Maps may be orientation reversing.
        """
        xi, eta = np.broadcast_arrays(np.asarray(xi, dtype=float), np.asarray(eta, dtype=float))
        _check_unit_square(xi, eta)
        jac = self._jacobian(xi, eta)
        det = np.abs(jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0])
        return jac, det

    def physical_area(self, order: int = 8) -> float:
        rule = gauss_rule(order)
        xi, eta = np.meshgrid(rule.points, rule.points, indexing="ij")
        _, det = self.jacobian(xi, eta)
        return float(np.einsum("i,j,ij->", rule.weights, rule.weights, det))


@dataclass(frozen=True)
class Rectangle(GeometryMap):
    width: float = 2.0
    height: float = 1.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("rectangle dimensions must be positive")

    def _map(self, xi, eta):
        return self.width * xi, self.height * eta

    def _jacobian(self, xi, eta):
        jac = np.zeros(xi.shape + (2, 2))
        jac[..., 0, 0] = self.width
        jac[..., 1, 1] = self.height
        return jac


@dataclass(frozen=True)
class QuarterRing(GeometryMap):
    """Quarter annulus in the first quadrant.

    ``xi`` sweeps the angle from the positive x-axis to the positive y-axis,
    ``eta`` the radius from ``r_in`` to ``r_out``. The ``xi = 0`` edge is the
    segment ``[r_in, r_out] x {0}``. This parametrization reverses
    orientation, so ``det J = -(pi/2) (r_out - r_in) r``.
    """

    r_in: float = 1.0
    r_out: float = 2.0

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise ValueError("need 0 < r_in < r_out")

    def _map(self, xi, eta):
        a = 0.5 * np.pi * xi
        r = self.r_in + (self.r_out - self.r_in) * eta
        return r * np.cos(a), r * np.sin(a)

    def _jacobian(self, xi, eta):
        a = 0.5 * np.pi * xi
        dr = self.r_out - self.r_in
        r = self.r_in + dr * eta
        c, s = np.cos(a), np.sin(a)
        jac = np.empty(xi.shape + (2, 2))
        jac[..., 0, 0] = -0.5 * np.pi * r * s
        jac[..., 1, 0] = 0.5 * np.pi * r * c
        jac[..., 0, 1] = dr * c
        jac[..., 1, 1] = dr * s
        return jac


@dataclass(frozen=True, eq=False)
class ElementQuadrature:
    """Gauss data on every element of a tensor space, with geometry factors.

    Arrays are indexed ``[a, b, s, t]`` for element ``(a, b)`` and Gauss
    point ``(s, t)``.
    """

    basis_u: np.ndarray  # (ne_u, nq, 2, p+1): values and first derivatives
    basis_v: np.ndarray  # (ne_v, nq, 2, q+1)
    points_u: np.ndarray  # (ne_u, nq)
    points_v: np.ndarray  # (ne_v, nq)
    jac_inv: np.ndarray  # (ne_u, ne_v, nq, nq, 2, 2), d(xi, eta)/d(x, y)
    dvol: np.ndarray  # (ne_u, ne_v, nq, nq), weight * |det J| * element size

    def physical_gradients(self) -> np.ndarray:
        """Physical gradients of the local basis, ``(ne_u, ne_v, nq, nq, nloc, 2)``."""
        bu, bv = self.basis_u, self.basis_v
        dxi = np.einsum("asi,btj->abstij", bu[:, :, 1], bv[:, :, 0])
        deta = np.einsum("asi,btj->abstij", bu[:, :, 0], bv[:, :, 1])
        shape = dxi.shape[:4] + (-1,)
        par = np.stack([dxi.reshape(shape), deta.reshape(shape)], axis=-1)
        # grad_x N = J^{-T} grad_xi N
        return np.einsum("abstkl,abstnk->abstnl", self.jac_inv, par)

    def values(self) -> np.ndarray:
        """Local basis values, ``(ne_u, ne_v, nq, nq, nloc)``."""
        v = np.einsum("asi,btj->abstij", self.basis_u[:, :, 0], self.basis_v[:, :, 0])
        return v.reshape(v.shape[:4] + (-1,))


def element_quadrature(geom: GeometryMap, space, order: int) -> ElementQuadrature:
    """Tensor Gauss rule of ``order`` points per direction on every element of ``space``."""
    rule = gauss_rule(order)
    (pu, bu), (pv, bv) = space.element_basis(rule.points, nderiv=1)
    xi = np.broadcast_to(pu[:, None, :, None], (pu.shape[0], pv.shape[0], rule.order, rule.order))
    eta = np.broadcast_to(pv[None, :, None, :], xi.shape)
    jac, det = geom.jacobian(xi, eta)
    hu = np.diff(space.space_u.element_bounds(), axis=1)[:, 0]
    hv = np.diff(space.space_v.element_bounds(), axis=1)[:, 0]
    dvol = det * np.einsum("a,b,s,t->abst", hu, hv, rule.weights, rule.weights)
    return ElementQuadrature(bu, bv, pu, pv, np.linalg.inv(jac), dvol)
