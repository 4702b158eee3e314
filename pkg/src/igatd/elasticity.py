"""Immersed plane-strain linear elasticity with B-spline displacements."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import GeometryMap, element_quadrature
from .spline import TensorSpace, basis_funs, eval_field

log = logging.getLogger(__name__)

EDGES = {"xi0": (0, 0), "xi1": (0, 1), "eta0": (1, 0), "eta1": (1, 1)}
EDGE_ALIASES = {"left": "xi0", "right": "xi1", "bottom": "eta0", "top": "eta1"}


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ElasticMaterial:
    E: float = 1.0
    nu: float = 1.0 / 3.0

    def __post_init__(self):
        if self.E <= 0:
            raise ValueError("Young modulus must be positive")
        if not 0 <= self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        """Plane-strain Lame parameter."""
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))


@dataclass(frozen=True)
class PointLoad:
    location: tuple[float, float]
    direction: tuple[float, float] = (0.0, -1.0)
    magnitude: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if not np.isclose(np.linalg.norm(d), 1.0, rtol=0, atol=1e-12):
            raise ValueError("load direction must be a unit vector")


def edge_dofs(space: TensorSpace, edge: str) -> np.ndarray:
    """Scalar basis indices on a parametric edge (the first/last index line)."""
    edge = EDGE_ALIASES.get(edge, edge)
    if edge not in EDGES:
        raise ValueError(f"unknown edge {edge!r}; expected one of {sorted(EDGES) + sorted(EDGE_ALIASES)}")
    axis, side = EDGES[edge]
    n, m = space.dims
    grid = np.arange(n * m).reshape(n, m)
    line = -1 if side else 0
    return grid[line, :] if axis == 0 else grid[:, line]


def nested_dissection(n: int, m: int, width: int, leaf: int = 64) -> np.ndarray:
    """Geometric nested-dissection order of an ``n x m`` grid of nodes.

    Separators are ``width`` lines thick, which decouples the halves for
    stencils reaching ``width`` nodes in each direction.
    """
    order = []

    def split(iu, jv):
        if iu.size * jv.size <= leaf or (iu.size <= 2 * width + 1 and jv.size <= 2 * width + 1):
            order.append((iu[:, None] * m + jv[None, :]).ravel())
            return
        if iu.size >= jv.size:
            k = iu.size // 2
            split(iu[:k], jv)
            split(iu[k + width :], jv)
            order.append((iu[k : k + width, None] * m + jv[None, :]).ravel())
        else:
            k = jv.size // 2
            split(iu, jv[:k])
            split(iu, jv[k + width :])
            order.append((iu[:, None] * m + jv[None, k : k + width]).ravel())

    split(np.arange(n), np.arange(m))
    return np.concatenate(order)


class _CsrPattern:
    """Fixed CSR sparsity pattern with a precomputed reduction of element entries."""

    def __init__(self, rows, cols, shape):
        key = rows.astype(np.int64) * shape[1] + cols
        self.order = np.argsort(key, kind="stable")
        skey = key[self.order]
        first = np.ones(skey.size, dtype=bool)
        first[1:] = skey[1:] != skey[:-1]
        self.starts = np.nonzero(first)[0]
        ukey = skey[self.starts]
        urow = ukey // shape[1]
        self.indices = (ukey % shape[1]).astype(np.int32)
        self.indptr = np.searchsorted(urow, np.arange(shape[0] + 1)).astype(np.int32)
        self.shape = shape

    def build(self, values) -> sp.csr_matrix:
        data = np.add.reduceat(values[self.order], self.starts)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


class StiffnessAssembler:
    """Element stiffness matrices of unit material coefficient, cached for reuse.

    Global displacement DOFs are component major: ``c * N + i`` for
    component ``c`` and scalar basis index ``i`` (``N = space.size``).
    """

    def __init__(self, space: TensorSpace, geometry: GeometryMap, material: ElasticMaterial, order: int | None = None):
        self.space = space
        self.geometry = geometry
        self.material = material
        self.order = order or max(space.degrees) + 1
        self.quad = element_quadrature(geometry, space, self.order)
        ne_u, ne_v = space.num_elements
        self.num_elements = ne_u * ne_v
        N = space.size
        self.ndof = 2 * N
        loc = space.element_dofs().reshape(self.num_elements, -1)
        self.nloc = loc.shape[1]
        self.element_dofs = np.concatenate([loc, loc + N], axis=1)
        self.element_areas = self.quad.dvol.sum(axis=(2, 3))
        self.Ke = self._element_matrices()
        self._patterns = {}

    def _element_matrices(self) -> np.ndarray:
        mu, lam = self.material.mu, self.material.lam
        nloc = self.nloc
        ne_u = self.space.num_elements[0]
        grads = self.quad.physical_gradients()
        out = np.empty((self.num_elements, 2 * nloc, 2 * nloc))
        rows_per_chunk = max(1, 4096 // max(1, self.space.num_elements[1]))
        for a0 in range(0, ne_u, rows_per_chunk):
            g = grads[a0 : a0 + rows_per_chunk]
            w = self.quad.dvol[a0 : a0 + rows_per_chunk]
            s = np.einsum("abstnk,abstml,abst->abnkml", g, g, w)
            s = s.reshape((-1, nloc, 2, nloc, 2))
            ke = np.empty((s.shape[0], 2, nloc, 2, nloc))
            lap = s[:, :, 0, :, 0] + s[:, :, 1, :, 1]
            for c in range(2):
                for d in range(2):
                    ke[:, c, :, d, :] = mu * s[:, :, d, :, c] + lam * s[:, :, c, :, d]
                ke[:, c, :, c, :] += mu * lap
            lo = a0 * self.space.num_elements[1]
            out[lo : lo + s.shape[0]] = ke.reshape(s.shape[0], 2 * nloc, 2 * nloc)
        return out

    def _pattern(self, free):
        key = None if free is None else free.tobytes()
        if key not in self._patterns:
            edofs = self.element_dofs
            if free is None:
                rows = np.repeat(edofs, edofs.shape[1], axis=1).ravel()
                cols = np.tile(edofs, (1, edofs.shape[1])).ravel()
                keep = None
                shape = (self.ndof, self.ndof)
            else:
                red = np.full(self.ndof, -1)
                red[free] = np.arange(free.sum())
                r = red[edofs]
                rows = np.repeat(r, r.shape[1], axis=1).ravel()
                cols = np.tile(r, (1, r.shape[1])).ravel()
                keep = np.nonzero((rows >= 0) & (cols >= 0))[0]
                rows, cols = rows[keep], cols[keep]
                shape = (int(free.sum()),) * 2
            self._patterns[key] = (_CsrPattern(rows, cols, shape), keep)
        return self._patterns[key]

    def matrix(self, alpha, free=None) -> sp.csr_matrix:
        """``K = sum_e alpha_e K_e``; restricted to the ``free`` DOF mask if given."""
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.size != self.num_elements:
            raise ValueError("alpha must hold one value per element")
        pattern, keep = self._pattern(None if free is None else np.asarray(free, dtype=bool))
        vals = (alpha[:, None, None] * self.Ke).ravel()
        return pattern.build(vals if keep is None else vals[keep])

    def element_energies(self, coeffs) -> np.ndarray:
        """``u_e^T K_e u_e`` per element, i.e. the quadrature of ``sigma(u):eps(u)``."""
        ue = np.asarray(coeffs, dtype=float).reshape(-1)[self.element_dofs]
        return np.einsum("ei,eij,ej->e", ue, self.Ke, ue)


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Stiffness matrix, load vector and Dirichlet data of one configuration."""

    K: sp.csr_matrix
    F: np.ndarray
    assembler: StiffnessAssembler
    alpha: np.ndarray
    fixed: np.ndarray = None
    prescribed: np.ndarray = None

    def __post_init__(self):
        n = self.assembler.ndof
        if self.fixed is None:
            object.__setattr__(self, "fixed", np.zeros(n, dtype=bool))
        if self.prescribed is None:
            object.__setattr__(self, "prescribed", np.zeros(n))

    @property
    def space(self) -> TensorSpace:
        return self.assembler.space


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Displacement coefficients, shape ``(2, n, m)``."""

    space: TensorSpace
    coeffs: np.ndarray
    fixed: np.ndarray = field(default=None)

    def __call__(self, xi, eta):
        return np.stack([eval_field(self.space, self.coeffs[c], xi, eta) for c in range(2)])

    @property
    def vector(self) -> np.ndarray:
        return self.coeffs.reshape(-1)


def assemble(space: TensorSpace, geometry: GeometryMap, material: ElasticMaterial, alpha, order: int | None = None,
             assembler: StiffnessAssembler | None = None) -> AssembledSystem:
    """Assemble the immersed stiffness matrix for element coefficients ``alpha``."""
    if assembler is None:
        assembler = StiffnessAssembler(space, geometry, material, order)
    alpha = np.asarray(alpha, dtype=float)
    K = assembler.matrix(alpha)
    return AssembledSystem(K, np.zeros(assembler.ndof), assembler, alpha)


def apply_dirichlet(system: AssembledSystem, edge: str, values=None) -> AssembledSystem:
    """Constrain both displacement components on a parametric edge.

    ``values`` is an optional full DOF vector whose entries on the edge are
    imposed; the default is homogeneous data.
    """
    idx = edge_dofs(system.space, edge)
    N = system.space.size
    dofs = np.concatenate([idx, idx + N])
    fixed = system.fixed.copy()
    fixed[dofs] = True
    prescribed = system.prescribed.copy()
    prescribed[dofs] = 0.0 if values is None else np.asarray(values, dtype=float).reshape(-1)[dofs]
    return replace(system, fixed=fixed, prescribed=prescribed)


def point_load_vector(space: TensorSpace, load: PointLoad) -> np.ndarray:
    """Consistent load vector ``F[c*N + a] = magnitude * direction[c] * B_a(location)``."""
    xi, eta = load.location
    su, bu = basis_funs(space.space_u, [xi])
    sv, bv = basis_funs(space.space_v, [eta])
    p, q = space.degrees
    iu = su[0] - p + np.arange(p + 1)
    jv = sv[0] - q + np.arange(q + 1)
    m = space.dims[1]
    idx = (iu[:, None] * m + jv[None, :]).ravel()
    vals = np.outer(bu[0, 0], bv[0, 0]).ravel()
    F = np.zeros(2 * space.size)
    for c in range(2):
        np.add.at(F, idx + c * space.size, load.magnitude * load.direction[c] * vals)
    return F


def apply_point_load(system: AssembledSystem, load: PointLoad) -> AssembledSystem:
    return replace(system, F=system.F + point_load_vector(system.space, load))


# loosest relative residual accepted when the requested one is below round-off
_FLOOR_RTOL_CAP = 1e-6


class SparseSolver:
    """SPD direct solver with a nested-dissection ordering and residual control."""

    def __init__(self, K: sp.spmatrix, perm: np.ndarray | None = None, rtol: float = 1e-10):
        self.K = K.tocsr()
        self.rtol = rtol
        self.perm = perm
        self._norm_k = spla.norm(self.K, "fro")
        Kp = self.K if perm is None else self.K[perm][:, perm]
        try:
            self._lu = spla.splu(
                Kp.tocsc(),
                permc_spec="NATURAL" if perm is not None else "MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def _solve(self, b):
        if self.perm is None:
            return self._lu.solve(b)
        x = np.empty_like(b)
        x[self.perm] = self._lu.solve(b[self.perm])
        return x

    def solve(self, b) -> np.ndarray:
        """Solve ``K x = b`` to relative residual ``rtol``.

        When ``rtol`` lies below what double precision can represent for this
        system (``|r| ~ eps |K| |x|``, reached on nearly void designs), the
        solution is accepted at that rounding floor with a warning.
        """
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0:
            return np.zeros_like(b)
        x = self._solve(b)
        best, best_res = x, np.inf
        for _ in range(5):
            r = b - self.K @ x
            if not np.all(np.isfinite(r)):
                raise SolverError("non-finite solution; matrix is singular")
            res = np.linalg.norm(r)
            if res <= self.rtol * nb:
                return x
            if res < best_res:
                best, best_res = x.copy(), res
            x = x + self._solve(r)
        r = b - self.K @ x
        if np.linalg.norm(r) < best_res:
            best, best_res = x, np.linalg.norm(r)
        if best_res <= self.rtol * nb:
            return best
        floor = 16 * np.finfo(float).eps * self._norm_k * np.linalg.norm(best)
        # a singular matrix also sits "at the floor", but with a useless residual
        if best_res <= floor and best_res <= _FLOOR_RTOL_CAP * nb:
            log.warning("relative residual %.2e at the rounding floor (target %.1e)", best_res / nb, self.rtol)
            return best
        raise SolverError(f"relative residual {best_res / nb:.3e} exceeds {self.rtol:.1e}")


def dof_ordering(space: TensorSpace, free) -> np.ndarray:
    """Fill-reducing order of the free DOFs, both components of a node adjacent."""
    n, m = space.dims
    nodes = nested_dissection(n, m, max(space.degrees))
    N = space.size
    full = np.column_stack([nodes, nodes + N]).ravel()
    red = np.full(2 * N, -1)
    red[free] = np.arange(int(np.sum(free)))
    order = red[full]
    return order[order >= 0]


def solve(system: AssembledSystem, rtol: float = 1e-10) -> DisplacementField:
    """Solve with the Dirichlet DOFs eliminated; raises ``SolverError`` on failure."""
    free = ~system.fixed
    u = system.prescribed.copy()
    if np.any(free):
        K = system.K
        rhs = system.F[free] - K[free][:, system.fixed] @ system.prescribed[system.fixed]
        Kff = K[free][:, free]
        solver = SparseSolver(Kff, dof_ordering(system.space, free), rtol)
        u[free] = solver.solve(rhs)
    n, m = system.space.dims
    return DisplacementField(system.space, u.reshape(2, n, m), system.fixed.copy())


def displacement_gradient(u: DisplacementField, geometry: GeometryMap, xi, eta, elements=None) -> np.ndarray:
    """Physical gradient ``du_i/dx_j`` at parametric points, shape ``(..., 2, 2)``."""
    xi, eta = np.broadcast_arrays(np.asarray(xi, dtype=float), np.asarray(eta, dtype=float))
    par = np.empty(xi.shape + (2, 2))
    for c in range(2):
        par[..., c, 0] = eval_field(u.space, u.coeffs[c], xi, eta, (1, 0), elements)
        par[..., c, 1] = eval_field(u.space, u.coeffs[c], xi, eta, (0, 1), elements)
    jac, _ = geometry.jacobian(xi, eta)
    return np.einsum("...ck,...kl->...cl", par, np.linalg.inv(jac))


def strain_energy_density(grad: np.ndarray, material: ElasticMaterial) -> np.ndarray:
    """``sigma(u):eps(u)`` from displacement gradients ``(..., 2, 2)``."""
    eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    tr = eps[..., 0, 0] + eps[..., 1, 1]
    return 2.0 * material.mu * np.sum(eps * eps, axis=(-1, -2)) + material.lam * tr * tr


def energy_density(u: DisplacementField, geometry: GeometryMap, material: ElasticMaterial, xi, eta, elements=None):
    """Unscaled strain-energy density ``sigma(u):eps(u)`` at parametric points."""
    return strain_energy_density(displacement_gradient(u, geometry, xi, eta, elements), material)


def cost(u: DisplacementField, materials, l: float, geometry: GeometryMap, material: ElasticMaterial,
         assembler: StiffnessAssembler | None = None) -> float:
    """Compliance ``sum_e alpha_e int_e sigma:eps`` plus ``l`` times the material area.

    ``materials`` is a :class:`~igatd.cutquad.MaterialField`.
    """
    if assembler is None:
        assembler = StiffnessAssembler(u.space, geometry, material)
    compliance = float(np.dot(materials.alpha.reshape(-1), assembler.element_energies(u.coeffs)))
    area = float(np.dot(materials.ratio.reshape(-1), assembler.element_areas.reshape(-1)))
    return compliance + l * area
