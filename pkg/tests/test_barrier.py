"""Barrier chain values, psi2 grouping, and capability maximization."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from ccbf.barrier import (
    BarrierSpec,
    Psi2Decomposition,
    QuadraticForm,
    decompose_psi2,
    max_capability,
    psi0,
    psi1,
)
from ccbf.dynamics import NetworkedSystem, SisModel, SisParams, neighborhood, rk4_step
from ccbf.errors import DimensionError, EmptyRegionError
from ccbf.geometry import ControlRegion, Halfspace
from ccbf.graph import NetworkGraph

from conftest import PAPER_BETA, PAPER_GAMMA, PAPER_UMAX, PAPER_X0, PAPER_XBAR


def _paper_setup():
    graph = NetworkGraph(3, [(j, i) for j in range(1, 4) for i in range(1, 4) if i != j])
    model = SisModel(graph, SisParams(PAPER_BETA, PAPER_GAMMA, PAPER_UMAX))
    states = {i: np.array([PAPER_X0[i - 1]]) for i in range(1, 4)}
    return graph, model, states


def test_psi_chain_frozen_values():
    graph, model, states = _paper_setup()
    spec = BarrierSpec(PAPER_XBAR[0])
    nbr = neighborhood(graph, states, 1)
    lie = model.lie_table(nbr, 1)
    assert psi0(spec, states[1]) == pytest.approx(0.06, abs=1e-15)
    assert psi1(spec, lie, states[1], np.array([0.0])) == pytest.approx(0.0456, abs=1e-12)
    assert psi1(spec, lie, states[1], np.array([0.75])) == pytest.approx(0.0756, abs=1e-12)


def test_decomposition_frozen_blocks():
    graph, model, states = _paper_setup()
    spec = BarrierSpec(PAPER_XBAR[0])
    lie = model.lie_table(neighborhood(graph, states, 1), 1)
    decomp = decompose_psi2(spec, lie, states[1], np.array([0.0]))
    assert decomp.self_term.constant == pytest.approx(0.02112, abs=1e-12)
    assert decomp.self_term.linear[0] == pytest.approx(0.1005, abs=1e-12)
    assert decomp.self_term.quadratic[0, 0] == pytest.approx(-0.04, abs=1e-15)
    assert sorted(decomp.coupling) == [2, 3]
    assert decomp.coupling[2][0] == pytest.approx(0.0024, abs=1e-12)
    assert decomp.coupling[3][0] == pytest.approx(0.0048, abs=1e-12)


def test_reassembly_matches_ungrouped_expansion():
    rng = np.random.default_rng(23)
    for _ in range(25):
        n = int(rng.integers(2, 5))
        edges = [(j, i) for j in range(1, n + 1) for i in range(1, n + 1)
                 if i != j and rng.random() < 0.7]
        graph = NetworkGraph(n, edges)
        beta = np.zeros((n, n))
        for i in range(n):
            beta[i, i] = rng.uniform(0.1, 0.8)
        for (j, i) in edges:
            beta[i - 1, j - 1] = rng.uniform(0.05, 0.5)
        params = SisParams(beta, rng.uniform(0.1, 0.6, size=n), rng.uniform(0.2, 1.0, size=n))
        model = SisModel(graph, params)
        states = {i: rng.uniform(0.01, 0.6, size=1) for i in range(1, n + 1)}
        i = int(rng.integers(1, n + 1))
        spec = BarrierSpec(rng.uniform(0.05, 0.5), eta=rng.uniform(0.5, 2.0),
                           kappa=rng.uniform(0.5, 2.0))
        lie = model.lie_table(neighborhood(graph, states, i), i)
        u_i = rng.uniform(0.0, 1.0, size=1)
        udot = rng.uniform(-0.5, 0.5, size=1)
        controls = {j: rng.uniform(0.0, 1.0, size=1) for j in lie.lgj_lf_h}
        decomp = decompose_psi2(spec, lie, states[i], udot)

        # ungrouped expansion, term by term, straight off the lie table
        h0 = spec.threshold - states[i][0]
        dot_lf = (lie.lf2_h + sum(lie.lfj_lf_h.values()) + float(lie.lg_lf_h @ u_i)
                  + sum(float(lie.lgj_lf_h[j] @ controls[j]) for j in lie.lgj_lf_h))
        dot_lg_u = float(lie.lf_lg_h @ u_i) + float(u_i @ lie.lg2_h @ u_i) + float(lie.lg_h @ udot)
        hdot = lie.lf_h + float(lie.lg_h @ u_i)
        direct = dot_lf + dot_lg_u + spec.eta * hdot + spec.kappa * (hdot + spec.eta * h0)

        assert decomp.reassemble(u_i, controls) == pytest.approx(direct, abs=1e-12)


def test_psi2_matches_psi1_telescope():
    """Central difference of psi1 along the flow equals psi2 - kappa psi1."""
    graph, model, states = _paper_setup()
    system = NetworkedSystem(graph, model)
    rng = np.random.default_rng(5)
    dt = 1e-4
    for trial in range(10):
        x = rng.uniform(0.01, 0.5, size=3)
        u = rng.uniform(0.0, 0.75, size=3)
        plus = rk4_step(system, x, u, dt)
        minus = rk4_step(system, x, u, -dt)

        def psi1_at(xvec, i, spec):
            sts = {k: np.array([xvec[k - 1]]) for k in range(1, 4)}
            lie = model.lie_table(neighborhood(graph, sts, i), i)
            return psi1(spec, lie, sts[i], np.array([u[i - 1]]))

        for i in range(1, 4):
            spec = BarrierSpec(PAPER_XBAR[i - 1])
            sts = {k: np.array([x[k - 1]]) for k in range(1, 4)}
            lie = model.lie_table(neighborhood(graph, sts, i), i)
            decomp = decompose_psi2(spec, lie, sts[i], np.array([0.0]))
            controls = {j: np.array([u[j - 1]]) for j in decomp.coupling}
            p2 = decomp.reassemble(np.array([u[i - 1]]), controls)
            p1 = psi1_at(x, i, spec)
            fd = (psi1_at(plus, i, spec) - psi1_at(minus, i, spec)) / (2.0 * dt)
            assert fd == pytest.approx(p2 - spec.kappa * p1, abs=1e-4)


def test_max_capability_1d_boundary():
    graph, model, states = _paper_setup()
    spec = BarrierSpec(PAPER_XBAR[0])
    lie = model.lie_table(neighborhood(graph, states, 1), 1)
    decomp = decompose_psi2(spec, lie, states[1], np.array([0.0]))
    region = ControlRegion(((0.0, 0.75),))
    val, arg = max_capability(decomp, region)
    # stationary point 0.1005 / 0.08 lies past the box, so the edge wins
    assert arg[0] == pytest.approx(0.75, abs=1e-12)
    assert val == pytest.approx(0.073995, abs=1e-12)


def test_max_capability_1d_interior_stationary_point():
    decomp = Psi2Decomposition({}, QuadraticForm(0.0, np.array([0.04]), np.array([[-0.04]])))
    val, arg = max_capability(decomp, ControlRegion(((0.0, 1.0),)))
    assert arg[0] == pytest.approx(0.5, abs=1e-12)
    assert val == pytest.approx(0.01, abs=1e-15)


def test_max_capability_respects_requests():
    decomp = Psi2Decomposition({}, QuadraticForm(0.0, np.array([1.0]), np.array([[0.0]])))
    region = ControlRegion(((0.0, 1.0),), (Halfspace(np.array([-1.0]), 0.4),))
    val, arg = max_capability(decomp, region)
    assert arg[0] == pytest.approx(0.4, abs=1e-12)
    assert val == pytest.approx(0.4, abs=1e-12)


def test_max_capability_frozen_region():
    decomp = Psi2Decomposition({}, QuadraticForm(1.0, np.array([2.0]), np.array([[-1.0]])))
    region = ControlRegion(((0.0, 1.0),), frozen_point=np.array([0.25]))
    val, arg = max_capability(decomp, region)
    assert arg[0] == 0.25
    assert val == pytest.approx(1.0 + 0.5 - 0.0625, abs=1e-15)


def test_max_capability_empty_region_raises():
    decomp = Psi2Decomposition({}, QuadraticForm(0.0, np.array([1.0]), np.array([[0.0]])))
    region = ControlRegion(((0.0, 1.0),), (Halfspace(np.array([1.0]), -2.0),))
    with pytest.raises(EmptyRegionError):
        max_capability(decomp, region)


def test_max_capability_2d_against_grid():
    rng = np.random.default_rng(31)
    box = ((0.0, 1.0), (0.0, 1.0))
    for _ in range(8):
        lin = rng.uniform(-1.0, 1.0, size=2)
        quad = -np.diag(rng.uniform(0.1, 1.0, size=2))
        form = QuadraticForm(float(rng.uniform(-1, 1)), lin, quad)
        decomp = Psi2Decomposition({}, form)
        hs = []
        if rng.random() < 0.7:
            a = rng.normal(size=2)
            hs.append(Halfspace(a, float(np.abs(a).sum() * 0.5)))
        region = ControlRegion(box, tuple(hs))
        val, arg = max_capability(decomp, region)

        # the grid gives a lower bound on the max; the ascent's point must be
        # feasible (so val cannot exceed the max) and must not lose to the grid
        best = -np.inf
        for p, q in itertools.product(np.linspace(0, 1, 251), repeat=2):
            u = np.array([p, q])
            if all(h.value(u) >= 0 for h in hs):
                best = max(best, form.value(u))
        assert region.contains(arg, tol=1e-8)
        assert form.value(arg) == pytest.approx(val, abs=1e-12)
        assert val >= best - 1e-9


def test_quadratic_form_shape_checks():
    with pytest.raises(DimensionError):
        QuadraticForm(0.0, np.array([1.0, 2.0]), np.array([[1.0]]))
    form = QuadraticForm(0.0, np.array([1.0]), np.array([[1.0]]))
    with pytest.raises(DimensionError):
        form.value(np.array([1.0, 2.0]))


def test_barrier_spec_validation():
    with pytest.raises(DimensionError):
        BarrierSpec(0.1, eta=0.0)
    with pytest.raises(DimensionError):
        BarrierSpec(0.1, kappa=-1.0)


def test_decompose_udot_shape_check():
    graph, model, states = _paper_setup()
    spec = BarrierSpec(PAPER_XBAR[0])
    lie = model.lie_table(neighborhood(graph, states, 1), 1)
    with pytest.raises(DimensionError):
        decompose_psi2(spec, lie, states[1], np.array([0.0, 0.0]))
