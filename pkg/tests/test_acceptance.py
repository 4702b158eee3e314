"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary table is
printed at the end of the session. The three 128 x 128 runs take under a minute.
"""

import math
import time

import numpy as np
import pytest

from igatd.config import parse_config
from igatd.cutquad import cut_ratios
from igatd.elasticity import ElasticMaterial, apply_dirichlet, assemble, solve
from igatd.geometry import Rectangle
from igatd.levelset import LevelSetField
from igatd.spline import basis_funs, build_collocation_system, eval_field, make_open_uniform_knots, make_space
from igatd.topopt import (
    StopReason,
    TDParams,
    TopologyOptimizer,
    angle,
    helmholtz_filter,
    interpolated_td,
    l2_norm,
    td_inside,
    td_outside,
    topological_derivative,
)

from .oracles import monte_carlo_area
from .test_elasticity import interpolate_displacement
from .test_topopt import l2_error

RING_COST, RING_ITERS = 4.15, 129


class RecordingOptimizer(TopologyOptimizer):
    """Optimizer that checks the energy identity on every state solve."""

    def __init__(self, config):
        super().__init__(config)
        self.identity_errors = []
        self.norms = []

    def solve_state(self, alpha):
        u = super().solve_state(alpha)
        K = self.assembler.matrix(alpha)
        v = u.vector
        work = float(self.F @ v)
        if work != 0.0:
            self.identity_errors.append(abs(float(v @ (K @ v)) - work) / abs(work))
        return u


def run_recorded(**overrides):
    preset = overrides.pop("preset", "cantilever")
    opt = RecordingOptimizer(parse_config(preset=preset, overrides=overrides))
    t0 = time.perf_counter()
    result = opt.run(lambda state: opt.norms.append(l2_norm(state.phi, opt.mass)))
    return opt, result, time.perf_counter() - t0


def strictly_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def area_fraction(opt, result):
    return result.evaluation.area / opt.geometry.physical_area()


def angle_recheck(opt, result):
    g = opt.derivative(opt.evaluate(result.phi))
    return math.degrees(angle(result.phi, g, opt.mass))


@pytest.fixture(scope="module")
def desk_run():
    return run_recorded(nelems=32, p=1, d=1)


@pytest.fixture(scope="module")
def cantilever_128():
    return {d: run_recorded(nelems=128, p=2, d=d) for d in (2, 1)}


@pytest.fixture(scope="module")
def ring_128():
    return run_recorded(preset="quarter_ring", nelems=128, p=2, d=2)


def test_criterion_1_basis_suite(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = dict(unity=0.0, dsum=0.0, support=0.0, repro=0.0)
    for p in (1, 2, 3, 4):
        kv = make_open_uniform_knots(10, p)
        x = rng.random(1000)
        span, ders = basis_funs(kv, x, 1)
        worst["unity"] = max(worst["unity"], np.max(np.abs(ders[:, 0].sum(axis=1) - 1)))
        worst["dsum"] = max(worst["dsum"], np.max(np.abs(ders[:, 1].sum(axis=1))))
        # local support: the nonzero functions at x are exactly those whose support holds x
        for xi, s in zip(x[:200], span[:200]):
            active = [i for i in range(kv.n) if kv.knots[i] <= xi < kv.knots[i + p + 1]]
            worst["support"] = max(worst["support"], float(active != list(range(s - p, s + 1))))
        space = make_space((7, 6), p)
        coef = rng.normal(size=(p + 1, p + 1))

        def poly(a, b, coef=coef, p=p):
            return sum(coef[i, j] * a**i * b**j for i in range(p + 1) for j in range(p + 1 - i))

        c = build_collocation_system(space).interpolate(poly)
        xs, ys = rng.random((2, 100))
        worst["repro"] = max(worst["repro"], np.max(np.abs(eval_field(space, c, xs, ys) - poly(xs, ys))))
    elapsed = time.perf_counter() - t0
    ok = (worst["unity"] <= 1e-12 and worst["dsum"] <= 1e-10 and worst["support"] == 0
          and worst["repro"] <= 1e-10 and elapsed < 5)
    acceptance.record(1, ok, f"unity {worst['unity']:.1e}, dsum {worst['dsum']:.1e}, "
                             f"reproduction {worst['repro']:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_2_cut_ratio_oracle(acceptance):
    t0 = time.perf_counter()
    space = make_space(32, 2)
    phi = LevelSetField.from_function(space, lambda x, y: (x - 0.5) ** 2 + (y - 0.5) ** 2 - 0.09)
    area = cut_ratios(phi).sum() / 32**2
    mc, se = monte_carlo_area(lambda x, y: (x - 0.5) ** 2 + (y - 0.5) ** 2 <= 0.09, 10**7)
    elapsed = time.perf_counter() - t0
    exact = math.pi * 0.09
    ok = abs(area - exact) <= 1e-5 and abs(area - mc) <= 4 * se and elapsed < 30
    acceptance.record(2, ok, f"|A - pi 0.09| = {abs(area - exact):.2e}, Monte-Carlo {mc:.6f} +- {se:.1e}, "
                             f"{elapsed:.1f}s")
    assert ok


def test_criterion_3_patch_and_energy_identity(acceptance, desk_run, cantilever_128, ring_128):
    worst_patch = 0.0
    mat = ElasticMaterial()
    for p in (1, 2, 3, 4):
        space = make_space(3, p)
        geom = Rectangle(2, 1)
        exact = interpolate_displacement(space, geom, lambda x, y: 0.1 + 0.5 * x - y, lambda x, y: 0.3 * x + 0.2 * y)
        system = assemble(space, geom, mat, np.ones((3, 3)))
        for edge in ("left", "right", "bottom", "top"):
            system = apply_dirichlet(system, edge, exact)
        worst_patch = max(worst_patch, np.max(np.abs(solve(system).vector - exact)))
    runs = [desk_run, ring_128, *cantilever_128.values()]
    errors = [e for opt, _, _ in runs for e in opt.identity_errors]
    worst_identity = max(errors)
    ok = worst_patch <= 1e-8 and worst_identity <= 1e-9
    acceptance.record(3, ok, f"patch error {worst_patch:.1e}, energy identity {worst_identity:.1e} "
                             f"over {len(errors)} solves")
    assert ok


def test_criterion_4_filter_eigenfunction(acceptance):
    k, gamma = 3, 1e-2
    space = make_space(64, 2)
    geom = Rectangle(1, 1)
    g = LevelSetField.from_function(space, lambda x, y: np.cos(k * np.pi * x))
    gt = helmholtz_filter(g, gamma, geom)
    factor = 1 / (1 + gamma * k**2 * np.pi**2)
    err = l2_error(gt, lambda x, y: factor * np.cos(k * np.pi * x), geom)
    ok = err <= 1e-4
    acceptance.record(4, ok, f"L2 error {err:.2e}")
    assert ok


def test_criterion_5_desk_scale(acceptance, desk_run):
    opt, result, elapsed = desk_run
    J = [row.J for row in result.history] + [result.evaluation.J]
    if result.stop_reason is StopReason.ANGLE_CONVERGED:
        # the last history row is the converged state itself
        J = J[:-1]
    frac = area_fraction(opt, result)
    norm_err = max(abs(n - 1) for n in opt.norms)
    checks = [strictly_decreasing(J), 0 < frac < 1, len(result.history) <= 200, elapsed < 120, norm_err <= 1e-10]
    if result.stop_reason is StopReason.ANGLE_CONVERGED:
        checks.append(angle_recheck(opt, result) < opt.config.eps_theta_deg)
    ok = all(checks)
    acceptance.record(5, ok, f"{result.stop_reason.value} after {len(result.history)} iterations, "
                             f"J {J[0]:.4f} -> {result.evaluation.J:.4f}, area fraction {frac:.4f}, {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_6_full_scale_cantilever(acceptance, cantilever_128):
    opt, result, elapsed = cantilever_128[2]
    opt1, result1, _ = cantilever_128[1]
    f2, f1 = area_fraction(opt, result), area_fraction(opt1, result1)
    agree = abs(f1 - f2) <= 0.05 * f2
    ok = (result.stop_reason is StopReason.ANGLE_CONVERGED and len(result.history) <= 200
          and elapsed < 1800 and agree)
    acceptance.record(6, ok, f"d=2 {result.stop_reason.value} after {len(result.history)} iterations "
                             f"({elapsed:.0f}s); area fraction d=2 {f2:.4f} vs d=1 {f1:.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_7_quarter_ring(acceptance, ring_128):
    opt, result, elapsed = ring_128
    J_final = result.evaluation.J
    iters = len(result.history)
    numeric = abs(J_final - RING_COST) <= 0.15 * RING_COST and abs(iters - RING_ITERS) <= 0.4 * RING_ITERS
    J = [row.J for row in result.history]
    if result.stop_reason is not StopReason.ANGLE_CONVERGED:
        J.append(J_final)
    theta = [row.theta_deg for row in result.history]
    # decreasing in trend: the last angle sits below the first and below the mean
    trend = theta[-1] < theta[0] and theta[-1] <= np.mean(theta)
    frac = area_fraction(opt, result)
    fallback = strictly_decreasing(J) and trend and 0 < frac < 1
    detail = (f"numeric target {'met' if numeric else 'missed'}: J={J_final:.3f} vs {RING_COST} +-15%, "
              f"{iters} iterations vs {RING_ITERS} +-40%")
    if not numeric:
        detail += (f"; fallback properties {'hold' if fallback else 'violated'} "
                   f"(theta {theta[0]:.2f} -> {theta[-1]:.2f} deg, area fraction {frac:.4f})")
    ok = numeric or fallback
    label = "PASS" if numeric else f"FAIL (numeric target); fallback {'PASS' if fallback else 'FAIL'}"
    acceptance.record(7, ok, detail, label)
    assert ok


def test_criterion_8_td_spot_checks(acceptance):
    params = TDParams(1.0, 1e-4, 5.0, 1e-4)
    values = [
        (topological_derivative(0.0, "inside", params), -5.0),
        (topological_derivative(0.0, "outside", params), 5.0),
        (topological_derivative(1.0, "inside", params), -2.00090),
    ]
    spot = all(abs(v - ref) <= 1e-5 for v, ref in values)
    w = np.linspace(0, 50, 101)
    ends = np.all(interpolated_td(w, 0.0, params) == td_outside(w, params)) and np.all(
        interpolated_td(w, 1.0, params) == -td_inside(w, params))
    ok = spot and bool(ends)
    acceptance.record(8, ok, f"values {[round(v, 6) for v, _ in values]}, endpoints exact: {bool(ends)}")
    assert ok


def test_criterion_9_determinism(acceptance, desk_run):
    _, first, _ = desk_run
    _, second, _ = run_recorded(nelems=32, p=1, d=1)
    a = np.array([row.J for row in first.history])
    b = np.array([row.J for row in second.history])
    ok = a.shape == b.shape and np.all(np.abs(a - b) <= 1e-9 * np.abs(a))
    acceptance.record(9, ok, f"{a.size} rows, max relative difference "
                             f"{np.max(np.abs(a - b) / np.abs(a)) if a.shape == b.shape else math.inf:.1e}")
    assert ok
