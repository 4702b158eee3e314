"""Level-set updates driven by the topological derivative of the compliance cost."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cutquad import MaterialField, material_field
from .elasticity import (
    ElasticMaterial,
    PointLoad,
    SparseSolver,
    StiffnessAssembler,
    DisplacementField,
    _CsrPattern,
    dof_ordering,
    edge_dofs,
    energy_density,
    point_load_vector,
)
from .geometry import GeometryMap, element_quadrature
from .levelset import LevelSetField, classify_elements, collocation_system, init_constant
from .spline import SplineField, TensorSpace, greville_abscissae, make_space

log = logging.getLogger(__name__)

KAPPA_MIN = 2.0**-10
# |sin(theta)| below which the slerp plane is degenerate
_SIN_TOL = 1e-12


@dataclass(frozen=True)
class TDParams:
    alpha_in: float = 1.0
    alpha_out: float = 1e-4
    l: float = 5.0
    gamma: float = 1e-4

    def __post_init__(self):
        if not 0 < self.alpha_out < self.alpha_in:
            raise ValueError("need 0 < alpha_out < alpha_in")
        if self.l < 0 or self.gamma < 0:
            raise ValueError("l and gamma must be non-negative")


class StopReason(Enum):
    ANGLE_CONVERGED = "AngleConverged"
    MAX_ITERATIONS = "MaxIterations"
    LINE_SEARCH_FAILED = "LineSearchFailed"

    @property
    def exit_code(self) -> int:
        return {"AngleConverged": 0, "MaxIterations": 2, "LineSearchFailed": 3}[self.value]


def td_inside(w, params: TDParams):
    """Topological derivative for creating a hole inside the material."""
    a_in, a_out = params.alpha_in, params.alpha_out
    return -3.0 * a_in * (a_out - a_in) / (2.0 * a_out + a_in) * w - params.l


def td_outside(w, params: TDParams):
    """Topological derivative for adding material inside the void."""
    a_in, a_out = params.alpha_in, params.alpha_out
    return -3.0 * a_out * (a_in - a_out) / (2.0 * a_in + a_out) * w + params.l


def topological_derivative(w, region: str, params: TDParams):
    """Closed-form topological derivative from the energy density ``w = sigma:eps``."""
    if region == "inside":
        return td_inside(w, params)
    if region == "outside":
        return td_outside(w, params)
    raise ValueError(f"region must be 'inside' or 'outside', got {region!r}")


def interpolated_td(w, ratio, params: TDParams):
    """Generalized topological derivative on an element with material fraction ``ratio``.

    Linear in ``ratio``: ratio 1 gives ``-dJ_in``, ratio 0 gives ``dJ_out``.
    The convex-combination form keeps both end points exact in floating point.
    """
    ratio = np.asarray(ratio, dtype=float)
    return (1.0 - ratio) * td_outside(w, params) + ratio * -td_inside(w, params)


def greville_incidence(kv) -> tuple[np.ndarray, np.ndarray]:
    """Pairs ``(point, element)`` of every Greville point with each element whose closure holds it."""
    g = greville_abscissae(kv)
    bounds = kv.element_bounds()
    tol = 1e-12 * (kv.domain[1] - kv.domain[0])
    inc = (g[:, None] >= bounds[None, :, 0] - tol) & (g[:, None] <= bounds[None, :, 1] + tol)
    pts, elems = np.nonzero(inc)
    return pts, elems


def generalized_td_samples(u: DisplacementField, space: TensorSpace, ratio, params: TDParams,
                           geometry: GeometryMap, material: ElasticMaterial) -> np.ndarray:
    """Generalized topological derivative at the Greville grid of ``space``.

    Each element whose closure holds a Greville point contributes the
    interpolated derivative computed from its own polynomial piece of ``u``
    and its own material fraction; the contributions are averaged.
    """
    gu, gv = space.greville_grid()
    pu, eu = greville_incidence(space.space_u)
    pv, ev = greville_incidence(space.space_v)
    I = np.repeat(pu, pv.size)
    A = np.repeat(eu, pv.size)
    J = np.tile(pv, pu.size)
    B = np.tile(ev, pu.size)
    w = energy_density(u, geometry, material, gu[I], gv[J], elements=(A, B))
    vals = interpolated_td(w, np.asarray(ratio)[A, B], params)
    m = space.dims[1]
    flat = I * m + J
    total = np.bincount(flat, weights=vals, minlength=space.size)
    count = np.bincount(flat, minlength=space.size)
    return (total / count).reshape(space.dims)


def generalized_td(u: DisplacementField, phi: LevelSetField, classes, ratios, params: TDParams,
                   geometry: GeometryMap, material: ElasticMaterial) -> LevelSetField:
    """Generalized topological derivative collocated into the level-set space.

    ``classes`` only serves as a consistency check: Inside and Outside
    elements must carry material fractions 1 and 0.
    """
    from .levelset import ElementClass

    ratios = np.asarray(ratios)
    classes = np.asarray(classes)
    if np.any(ratios[classes == ElementClass.INSIDE] != 1.0) or np.any(ratios[classes == ElementClass.OUTSIDE] != 0.0):
        raise ValueError("material fractions inconsistent with element classes")
    vals = generalized_td_samples(u, phi.space, ratios, params, geometry, material)
    return LevelSetField(phi.space, collocation_system(phi.space).solve(vals), vals)


def scalar_matrices(space: TensorSpace, geometry: GeometryMap, order: int | None = None):
    """Mass and Laplace stiffness matrices of a scalar spline space on the physical domain."""
    quad = element_quadrature(geometry, space, order or max(space.degrees) + 1)
    vals = quad.values()
    grads = quad.physical_gradients()
    me = np.einsum("abstn,abstm,abst->abnm", vals, vals, quad.dvol)
    le = np.einsum("abstnk,abstmk,abst->abnm", grads, grads, quad.dvol)
    edofs = space.element_dofs().reshape(-1, vals.shape[-1])
    nloc = edofs.shape[1]
    rows = np.repeat(edofs, nloc, axis=1).ravel()
    cols = np.tile(edofs, (1, nloc)).ravel()
    pattern = _CsrPattern(rows, cols, (space.size, space.size))
    return pattern.build(me.ravel()), pattern.build(le.ravel())


class HelmholtzFilter:
    """Galerkin solve of ``-gamma Lap(gt) + gt = g`` with natural boundary conditions."""

    def __init__(self, space: TensorSpace, geometry: GeometryMap, gamma: float):
        if gamma < 0:
            raise ValueError("gamma must be non-negative")
        self.space = space
        self.gamma = gamma
        self.mass, self.laplace = scalar_matrices(space, geometry)
        self._lu = spla.splu((gamma * self.laplace + self.mass).tocsc())

    def apply(self, coeffs) -> np.ndarray:
        c = np.asarray(coeffs, dtype=float).reshape(-1)
        return self._lu.solve(self.mass @ c).reshape(self.space.dims)


def helmholtz_filter(g: SplineField, gamma: float, geometry: GeometryMap) -> SplineField:
    flt = HelmholtzFilter(g.space, geometry, gamma)
    return SplineField(g.space, flt.apply(g.coeffs))


def _coeffs(f) -> np.ndarray:
    return np.asarray(f.coeffs if isinstance(f, SplineField) else f, dtype=float).reshape(-1)


def l2_norm(f, mass: sp.spmatrix) -> float:
    c = _coeffs(f)
    return math.sqrt(max(float(c @ (mass @ c)), 0.0))


def normalize(f, mass: sp.spmatrix) -> np.ndarray:
    c = _coeffs(f)
    nrm = l2_norm(c, mass)
    if nrm == 0:
        raise ValueError("cannot normalize a zero field")
    return c / nrm


def angle(phi, g, mass: sp.spmatrix) -> float:
    """L2 angle (radians) between two fields of the same space."""
    a, b = _coeffs(phi), _coeffs(g)
    ng = l2_norm(b, mass)
    if ng == 0:
        raise ValueError("degenerate derivative field: ||g|| = 0")
    cos = float(a @ (mass @ b)) / (l2_norm(a, mass) * ng)
    return math.acos(min(1.0, max(-1.0, cos)))


def slerp(phi, g, kappa: float, theta: float, mass: sp.spmatrix) -> np.ndarray:
    """Move ``phi`` towards ``g / ||g||`` by the fraction ``kappa`` of the angle ``theta``.

    Returns L2-normalized coefficients. At ``theta == pi`` only ``kappa == 1``
    is defined, and yields ``g / ||g||``.
    """
    if not 0 < kappa <= 1:
        raise ValueError("kappa must lie in (0, 1]")
    a = _coeffs(phi)
    b = normalize(g, mass)
    s = math.sin(theta)
    if abs(s) < _SIN_TOL:
        if theta > 0.5 * math.pi and kappa == 1.0:
            return b
        raise ValueError("slerp undefined: phi and g are (anti)parallel")
    out = (math.sin((1.0 - kappa) * theta) * a + math.sin(kappa * theta) * b) / s
    return normalize(out, mass)


def line_search(cost: Callable[[float], tuple[float, object]], J_current: float, kappa_min: float = KAPPA_MIN):
    """Largest ``kappa`` in ``1, 1/2, 1/4, ...`` whose candidate strictly lowers the cost.

    ``cost(kappa)`` returns ``(J, payload)``; a ``ValueError`` marks an
    inadmissible step. Returns ``(kappa, J, payload, tries)`` or ``None``.
    """
    kappa = 1.0
    tries = 0
    while kappa >= kappa_min:
        tries += 1
        try:
            J, payload = cost(kappa)
        except ValueError:
            J, payload = math.inf, None
        if J < J_current:
            return kappa, J, payload, tries
        kappa *= 0.5
    return None


@dataclass(frozen=True, eq=False)
class Evaluation:
    """Everything derived from one level-set function."""

    phi: LevelSetField
    classes: np.ndarray
    materials: MaterialField
    u: DisplacementField
    compliance: float
    area: float
    J: float


@dataclass
class OptimizerState:
    iteration: int
    phi: LevelSetField
    g: np.ndarray | None
    theta_deg: float
    kappa: float
    evaluation: Evaluation
    history: list = field(default_factory=list)


@dataclass
class OptimizationResult:
    phi: LevelSetField
    history: list
    stop_reason: StopReason
    evaluation: Evaluation
    theta_deg: float


class TopologyOptimizer:
    """Immersed compliance minimization on a fixed B-spline background mesh.

    Parameters
    ----------
    config : RunConfig
    """

    def __init__(self, config):
        self.config = config
        self.geometry = config.geometry_map()
        self.material = ElasticMaterial(config.E, config.nu)
        self.params = TDParams(config.alpha_in, config.alpha_out, config.l, config.gamma)
        self.space_u = make_space(config.nelems, config.p)
        self.space_phi = make_space(config.nelems, config.d)
        self.assembler = StiffnessAssembler(self.space_u, self.geometry, self.material)
        N = self.space_u.size
        self.fixed = np.zeros(2 * N, dtype=bool)
        for edge in config.dirichlet_edges:
            idx = edge_dofs(self.space_u, edge)
            self.fixed[idx] = True
            self.fixed[idx + N] = True
        self.free = ~self.fixed
        self.load = PointLoad(tuple(config.load_location), tuple(config.load_direction), config.load_magnitude)
        self.F = point_load_vector(self.space_u, self.load)
        self._order = dof_ordering(self.space_u, self.free)
        self.filter = HelmholtzFilter(self.space_phi, self.geometry, self.params.gamma)
        self.mass = self.filter.mass
        self.classify_order = self.assembler.order + 1
        self.solves = 0

    def initial_level_set(self) -> LevelSetField:
        phi = init_constant(self.space_phi, self.config.phi_init)
        return LevelSetField(self.space_phi, normalize(phi, self.mass).reshape(self.space_phi.dims))

    def solve_state(self, alpha) -> DisplacementField:
        K = self.assembler.matrix(alpha, self.free)
        solver = SparseSolver(K, self._order, self.config.solver_tol)
        u = np.zeros(2 * self.space_u.size)
        u[self.free] = solver.solve(self.F[self.free])
        self.solves += 1
        n, m = self.space_u.dims
        return DisplacementField(self.space_u, u.reshape(2, n, m), self.fixed)

    def evaluate(self, phi: LevelSetField) -> Evaluation:
        classes = classify_elements(phi, self.classify_order)
        mats = material_field(phi, classes, self.params.alpha_out, self.params.alpha_in)
        u = self.solve_state(mats.alpha)
        compliance = float(np.dot(mats.alpha.reshape(-1), self.assembler.element_energies(u.coeffs)))
        area = float(np.dot(mats.ratio.reshape(-1), self.assembler.element_areas.reshape(-1)))
        return Evaluation(phi, classes, mats, u, compliance, area, compliance + self.params.l * area)

    def derivative(self, ev: Evaluation) -> np.ndarray:
        """Filtered generalized topological derivative coefficients."""
        g = generalized_td(ev.u, ev.phi, ev.classes, ev.materials.ratio, self.params, self.geometry, self.material)
        return self.filter.apply(g.coeffs)

    def candidate(self, phi: LevelSetField, g, theta: float, kappa: float) -> Evaluation:
        coeffs = slerp(phi, g, kappa, theta, self.mass)
        return self.evaluate(LevelSetField(self.space_phi, coeffs.reshape(self.space_phi.dims)))

    def run(self, callback: Callable[[OptimizerState], None] | None = None) -> OptimizationResult:
        cfg = self.config
        phi = self.initial_level_set()
        ev = self.evaluate(phi)
        history = []
        stop = StopReason.MAX_ITERATIONS
        theta_deg = math.nan
        t0 = time.perf_counter()
        for it in range(1, cfg.max_iter + 1):
            g = self.derivative(ev)
            theta = angle(ev.phi, g, self.mass)
            theta_deg = math.degrees(theta)
            kappa = math.nan
            next_ev = None
            if theta_deg < cfg.eps_theta_deg:
                stop = StopReason.ANGLE_CONVERGED
            else:
                def trial(k, phi=ev.phi, g=g, theta=theta):
                    cand = self.candidate(phi, g, theta, k)
                    return cand.J, cand

                found = line_search(trial, ev.J, KAPPA_MIN)
                if found is None:
                    stop = StopReason.LINE_SEARCH_FAILED
                else:
                    kappa, _, next_ev, _ = found
            row = HistoryRow(it, ev.J, theta_deg, ev.area, kappa, time.perf_counter() - t0)
            history.append(row)
            log.info("iter %3d  J=%.6g  theta=%.3f deg  area=%.4f  kappa=%g", it, ev.J, theta_deg, ev.area, kappa)
            if callback is not None:
                callback(OptimizerState(it, ev.phi, g, theta_deg, kappa, ev, history))
            if next_ev is None:
                break
            ev = next_ev
        return OptimizationResult(ev.phi, history, stop, ev, theta_deg)


@dataclass(frozen=True)
class HistoryRow:
    iter: int
    J: float
    theta_deg: float
    area: float
    kappa: float
    wall_time_s: float


def run(config, callback=None) -> OptimizationResult:
    """Run the optimization loop for a :class:`~igatd.config.RunConfig`."""
    return TopologyOptimizer(config).run(callback)
