import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sohb.model import Slot, SystemParams, assemble_residuals, dc_constraints, evaluate
from sohb.solver import (NoSOError, SingularJacobianError, SolveConfig, newton_solve, normalize_gauge, promote,
                         solve_so)

from conftest import PRESETS, solved


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(order=-1)
    with pytest.raises(ValueError):
        SolveConfig(tol=0)
    with pytest.raises(ValueError):
        SolveConfig(scan_rect=(0.1, 0.4))


def test_newton_plain_arrays():
    rep = newton_solve(lambda v: np.array([v[0] ** 2 - 2.0, v[1] - v[0]]), [1.0, 0.0])
    assert rep.converged
    assert rep.solution == pytest.approx([math.sqrt(2), math.sqrt(2)], abs=1e-9)
    # quadratic convergence: a handful of iterations
    assert rep.iterations <= 7
    assert all(b < a for a, b in zip(rep.history, rep.history[1:]))


def test_newton_step_halving_rescues_overshoot():
    # arctan: the full Newton step from x0 = 2 diverges; halving keeps it contracting
    rep = newton_solve(lambda v: np.arctan(v), [2.0])
    assert rep.converged and abs(rep.solution[0]) < 1e-9
    # without halving the iterates run away until the Jacobian underflows
    with pytest.raises(SingularJacobianError):
        newton_solve(lambda v: np.arctan(v), [2.0], SolveConfig(max_halvings=0), max_iter=10)


def test_newton_errors():
    with pytest.raises(ValueError):
        newton_solve(lambda v: np.array([v[0], v[0]]), [1.0])
    with pytest.raises(SingularJacobianError):
        newton_solve(lambda v: np.array([v[0] + v[1] - 1.0, 2 * v[0] + 2 * v[1] - 3.0]), [0.0, 0.0])
    rep = newton_solve(lambda v: np.array([v[0] ** 2 + 1.0]), [1.0], max_iter=5)
    assert not rep.converged


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.5, 5), b=st.floats(-3, 3))
def test_newton_random_quadratics(a, b):
    root = math.sqrt(a)
    rep = newton_solve(lambda v: np.array([v[0] ** 2 - a, v[1] - b * v[0]]), [root * 1.3, 0.0])
    assert rep.converged
    assert rep.solution[0] == pytest.approx(root, rel=1e-8)


def test_promote_preserves_shared_slots(test1):
    x = test1.solution
    up = promote(x, 5)
    assert up.order == 5
    for s in x.layout.slots:
        assert up.values[up.layout.index[s]] == x.values[x.layout.index[s]]
    assert up.coeff("u_dc", 5) == 0
    down = promote(up, 3)
    assert np.array_equal(down.values, x.values)
    lim = promote(x, 3, limiter_active=True, extra={Slot("i_dpp", 0, 0, "M"): 100.0})
    assert lim.get("i_dpp", 0, 0, "M") == 100.0


def test_converged_test1(test1, p1):
    assert test1.converged and test1.mode.value == "None"
    x = test1.solution
    assert np.max(np.abs(assemble_residuals(x, p1))) <= 1e-9
    assert x.get("theta0", 0, 1, "M") > 0
    assert x.fs == pytest.approx(9.8926, abs=0.02)


def test_controller_constraints_exact_at_converged_solutions(test1, p1):
    """Zero-frequency controller conditions hold to 1e-9 in raw units."""
    dc = dc_constraints(evaluate(test1.solution, p1), p1)
    assert max(abs(v) for v in dc.values()) <= 1e-9


def test_half_period_gauge_flip_is_a_solution(test1, p1):
    """Shifting the time origin by half an oscillation period gives another zero of the residual."""
    x = test1.solution
    vals = x.values.copy()
    for i, s in enumerate(x.layout.slots):
        if s.signal != "f_s" and s.n % 2 and s.part in ("R", "I", "M"):
            vals[i] = -vals[i]
    flipped = type(x)(x.layout, vals, x.f1, x.im_uga)
    assert flipped.get("theta0", 0, 1, "M") < 0
    assert np.max(np.abs(assemble_residuals(flipped, p1))) < 1e-8
    back = normalize_gauge(flipped)
    assert np.allclose(back.values, x.values, atol=1e-12)


def test_no_so_below_the_stability_boundary():
    with pytest.raises(NoSOError):
        solve_so(SystemParams(L_g=0.1e-3), SolveConfig(order=3))


def test_seeded_solve_reconverges(test1, p1):
    rep = solve_so(p1, SolveConfig(order=3), seed=test1.solution)
    assert rep.converged
    assert rep.fs == pytest.approx(test1.fs, abs=1e-8)


def test_order_zero_is_the_equilibrium(p1, eq1):
    rep = solve_so(p1, SolveConfig(order=0))
    assert rep.converged
    assert np.allclose(rep.solution.values, eq1.values, atol=1e-9)


def test_limiter_preset_spectra():
    assert PRESETS["test4"].lim.I_low == 0.0


@pytest.mark.slow
def test_limited_solution_promotes_to_higher_order():
    """New polar i_d** slots start off zero magnitude, where the angle has no derivative."""
    base = solved("test4")
    up = promote(base.solution, 4)
    assert up.get("i_dpp", 0, 4, "M") > 0
    rep = solve_so(PRESETS["test4"], SolveConfig(order=4), seed=base.solution)
    assert rep.converged and rep.mode is base.mode
    assert rep.fs == pytest.approx(base.fs, abs=1e-3)
