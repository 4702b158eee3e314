"""Discretized level-set function, element classification and L2 products."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .cutquad import gauss_rule
from .geometry import GeometryMap
from .spline import CollocationSystem, SplineField, TensorSpace

# sample values with |phi| below this count as material
ZERO_TOL = 1e-12


class ElementClass(IntEnum):
    INSIDE = 0
    OUTSIDE = 1
    CUT = 2


@lru_cache(maxsize=16)
def collocation_system(space: TensorSpace) -> CollocationSystem:
    """Factorized Greville collocation, shared by all fields on ``space``."""
    return CollocationSystem(space)


@dataclass(frozen=True, eq=False)
class LevelSetField(SplineField):
    """Level-set function; negative values mark material.

    ``greville_values`` caches the field at the Greville grid and is filled
    in on construction when not given.
    """

    greville_values: np.ndarray | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.greville_values is None:
            vals = collocation_system(self.space).apply(self.coeffs)
        else:
            vals = np.array(self.greville_values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "greville_values", vals)

    @classmethod
    def from_function(cls, space: TensorSpace, func) -> LevelSetField:
        """Collocate ``func(xi, eta)`` at the Greville grid."""
        colloc = collocation_system(space)
        gu, gv = colloc.points
        xi, eta = np.meshgrid(gu, gv, indexing="ij")
        vals = np.asarray(func(xi, eta), dtype=float) * np.ones_like(xi)
        return cls(space, colloc.solve(vals), vals)

    def __neg__(self):
        return LevelSetField(self.space, -self.coeffs, -self.greville_values)


def init_constant(space: TensorSpace, value: float) -> LevelSetField:
    """Constant level set; partition of unity makes constant coefficients exact."""
    return LevelSetField(space, np.full(space.dims, float(value)), np.full(space.dims, float(value)))


def update_from_greville(phi: LevelSetField, new_values) -> LevelSetField:
    """Re-collocate so that the field interpolates ``new_values`` at the Greville grid."""
    vals = np.asarray(new_values, dtype=float)
    if vals.shape != phi.space.dims:
        raise ValueError(f"expected Greville values of shape {phi.space.dims}, got {vals.shape}")
    coeffs = collocation_system(phi.space).solve(vals)
    return LevelSetField(phi.space, coeffs, vals)


def element_samples(field: SplineField, local_points) -> np.ndarray:
    """Field values at a tensor lattice of local points in every element.

    Returns an array ``(ne_u, ne_v, s, s)``.
    """
    (_, bu), (_, bv) = field.space.element_basis(local_points, nderiv=0)
    local = field.space.element_coefficients(field.coeffs)
    return np.einsum("asi,abij,btj->abst", bu[:, :, 0], local, bv[:, :, 0])


def classify_elements(phi: SplineField, order: int | None = None) -> np.ndarray:
    """Inside / Outside / Cut label for every element.

    The sign of ``phi`` is sampled at the ``order x order`` Gauss points and
    the four corners of each element. Values within ``ZERO_TOL`` of zero
    count as material, so an element is Inside when every sample is
    ``<= 0``, Outside when every sample is ``>= 0``, and Cut otherwise.

    Parameters
    ----------
    order : int, optional
        Gauss points per direction; defaults to ``degree + 2``.
    """
    if order is None:
        order = max(phi.space.degrees) + 2
    gauss = gauss_rule(order).points
    local = np.concatenate([[0.0], gauss, [1.0]])
    vals = element_samples(phi, local)
    mask = np.zeros((local.size, local.size), dtype=bool)
    mask[1:-1, 1:-1] = True
    mask[[0, 0, -1, -1], [0, -1, 0, -1]] = True
    vals = vals[:, :, mask]
    material = np.all(vals <= ZERO_TOL, axis=-1)
    void = np.all(vals >= -ZERO_TOL, axis=-1)
    classes = np.full(vals.shape[:2], ElementClass.CUT, dtype=np.int8)
    classes[void] = ElementClass.OUTSIDE
    classes[material] = ElementClass.INSIDE
    return classes


def l2_inner_product(f: SplineField, g: SplineField, geometry: GeometryMap, order: int | None = None) -> float:
    """``int_D f g dD`` by element-wise Gauss quadrature on the physical domain.

    Both fields must live on the same background mesh; their degrees may differ.
    """
    if not (
        np.array_equal(f.space.space_u.breaks, g.space.space_u.breaks)
        and np.array_equal(f.space.space_v.breaks, g.space.space_v.breaks)
    ):
        raise ValueError("fields live on different background meshes")
    if order is None:
        order = max(f.space.degrees + g.space.degrees) + 1
    rule = gauss_rule(order)
    vf = element_samples(f, rule.points)
    vg = element_samples(g, rule.points)
    kv_u, kv_v = f.space.space_u, f.space.space_v
    bu, bv = kv_u.element_bounds(), kv_v.element_bounds()
    xi = bu[:, :1] + (bu[:, 1:] - bu[:, :1]) * rule.points
    eta = bv[:, :1] + (bv[:, 1:] - bv[:, :1]) * rule.points
    _, det = geometry.jacobian(xi[:, None, :, None], eta[None, :, None, :])
    w = np.einsum("a,b,s,t->abst", bu[:, 1] - bu[:, 0], bv[:, 1] - bv[:, 0], rule.weights, rule.weights)
    return float(np.sum(vf * vg * det * w))


def sample_lattice(field: SplineField, resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Field on a uniform ``resolution x resolution`` parametric lattice.

    Returns ``(xi, eta, values)``, each of shape ``(resolution, resolution)``.
    """
    if resolution < 2:
        raise ValueError("lattice resolution must be >= 2")
    s = np.linspace(0.0, 1.0, resolution)
    xi, eta = np.meshgrid(s, s, indexing="ij")
    return xi, eta, field(xi, eta)
