"""Second-order barrier chain and its control-space decomposition.

For a node with scalar barrier h = threshold - x the chain is

    psi0 = h
    psi1 = d(psi0)/dt + eta * psi0
    psi2 = d(psi1)/dt + kappa * psi1

with constant linear gains eta, kappa > 0.  Keeping psi2 >= 0 whenever
psi1 = 0 renders the safe set forward invariant.  Expanding psi2 along the
networked dynamics and grouping by whose control appears gives

    psi2(u_i, {u_j}) = sum_j coupling[j] . u_j + self_term(u_i)

where coupling[j] = L_{g_j} L_{f_i} h_i and self_term is a quadratic in the
node's own control:

    constant  = sum_j L_{f_j} L_{f_i} h_i + L_{f_i}^2 h_i + L_g h . udot
                + eta * L_f h + kappa * (L_f h + eta * h)
    linear    = L_f L_g h + L_g L_f h + (eta + kappa) * L_g h
    quadratic = L_g L_g h

The node's capability is the maximum of self_term over its admissible
control region; everything beyond that must come from neighbors through
the coupling terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dynamics import LieTable
from .errors import DimensionError, EmptyRegionError, NumericsError
from .geometry import NEGLIGIBLE_NORMAL, ControlRegion, box_center, box_vertices, project_point

# stop coordinate ascent once a full sweep moves no coordinate by more
ASCENT_TOL = 1e-10
ASCENT_SWEEP_CAP = 1000


@dataclass(frozen=True)
class BarrierSpec:
    """Threshold barrier h = threshold - x with linear chain gains."""

    threshold: float
    eta: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "kappa", float(self.kappa))
        if not np.isfinite(self.threshold):
            raise NumericsError("barrier threshold must be finite")
        if self.eta <= 0.0 or self.kappa <= 0.0:
            raise DimensionError("chain gains eta and kappa must be positive")


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Scalar map u -> constant + linear . u + u . quadratic u."""

    constant: float
    linear: np.ndarray
    quadratic: np.ndarray

    def __post_init__(self):
        lin = np.atleast_1d(np.asarray(self.linear, dtype=float))
        quad = np.asarray(self.quadratic, dtype=float)
        if quad.ndim != 2 or quad.shape != (lin.shape[0], lin.shape[0]):
            raise DimensionError("quadratic block must be MxM for linear part of length M")
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "quadratic", quad)

    @property
    def dim(self) -> int:
        return self.linear.shape[0]

    def value(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise DimensionError(f"control has shape {u.shape}, form has dim {self.dim}")
        return float(self.constant + self.linear @ u + u @ self.quadratic @ u)


@dataclass(frozen=True, eq=False)
class Psi2Decomposition:
    """psi2 split into neighbor coupling rows and the node's own quadratic."""

    coupling: Mapping[int, np.ndarray]
    self_term: QuadraticForm

    def __post_init__(self):
        object.__setattr__(
            self,
            "coupling",
            {int(j): np.atleast_1d(np.asarray(a, dtype=float)) for j, a in self.coupling.items()},
        )

    def reassemble(self, u_self: np.ndarray, neighbor_controls: Mapping[int, np.ndarray]) -> float:
        total = self.self_term.value(u_self)
        for j in sorted(self.coupling):
            total += float(self.coupling[j] @ np.asarray(neighbor_controls[j], dtype=float))
        return total


def psi0(spec: BarrierSpec, state: np.ndarray) -> float:
    state = np.atleast_1d(np.asarray(state, dtype=float))
    return spec.threshold - float(state[0])


def psi1(spec: BarrierSpec, lie: LieTable, state: np.ndarray, u: np.ndarray) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(lie.lf_h + lie.lg_h @ u + spec.eta * psi0(spec, state))


def decompose_psi2(spec: BarrierSpec, lie: LieTable, state: np.ndarray,
                   udot: np.ndarray) -> Psi2Decomposition:
    """Group the psi2 expansion by control ownership.

    udot is the node's model of its own control rate; it enters only the
    constant block, through L_g h . udot.
    """
    udot = np.atleast_1d(np.asarray(udot, dtype=float))
    if udot.shape != lie.lg_h.shape:
        raise DimensionError(f"udot has shape {udot.shape}, expected {lie.lg_h.shape}")
    h0 = psi0(spec, state)
    cross_drift = sum(lie.lfj_lf_h[j] for j in sorted(lie.lfj_lf_h))
    constant = (cross_drift + lie.lf2_h + float(lie.lg_h @ udot)
                + spec.eta * lie.lf_h + spec.kappa * (lie.lf_h + spec.eta * h0))
    linear = lie.lf_lg_h + lie.lg_lf_h + (spec.eta + spec.kappa) * lie.lg_h
    coupling = {j: lie.lgj_lf_h[j] for j in sorted(lie.lgj_lf_h)}
    return Psi2Decomposition(coupling, QuadraticForm(constant, linear, lie.lg2_h))


def _max_quadratic_on_interval(c: float, l: float, q: float,
                               lo: float, hi: float) -> tuple[float, float]:
    """Exact maximum of c + l t + q t^2 on [lo, hi]; returns (value, argmax)."""
    cands = [lo, hi]
    if q != 0.0:
        t = -l / (2.0 * q)
        if lo < t < hi:
            cands.append(t)
    best_t = max(cands, key=lambda t: c + l * t + q * t * t)
    return c + l * best_t + q * best_t * best_t, best_t


def _coordinate_ascent(form: QuadraticForm, region: ControlRegion, start: np.ndarray,
                       tol: float, cap: int) -> tuple[float, np.ndarray]:
    u = np.asarray(start, dtype=float).copy()
    live = [h for h in region.requests if np.max(np.abs(h.normal)) > NEGLIGIBLE_NORMAL]
    sym = form.quadratic + form.quadratic.T
    for _ in range(cap):
        moved = 0.0
        for d in range(form.dim):
            lo, hi = region.box[d]
            for h in live:
                ad = float(h.normal[d])
                rest = float(h.normal @ u + h.offset) - ad * u[d]
                if abs(ad) <= NEGLIGIBLE_NORMAL:
                    continue
                bound = -rest / ad
                if ad > 0.0:
                    lo = max(lo, bound)
                else:
                    hi = min(hi, bound)
            if lo > hi:
                continue
            lin = float(form.linear[d] + sym[d] @ u - sym[d, d] * u[d])
            _, t = _max_quadratic_on_interval(0.0, lin, float(form.quadratic[d, d]), lo, hi)
            moved = max(moved, abs(t - u[d]))
            u[d] = t
        if moved <= tol:
            break
    return form.value(u), u


def max_capability(decomp: Psi2Decomposition, region: ControlRegion,
                   tol: float = ASCENT_TOL, cap: int = ASCENT_SWEEP_CAP
                   ) -> tuple[float, np.ndarray]:
    """Maximum of the node's own quadratic over its admissible region.

    Exact for frozen regions and for 1-D regions; multi-dimensional regions
    use projected coordinate ascent from the box center and every box
    vertex (exact per-coordinate steps, monotone improvement).
    """
    form = decomp.self_term
    if region.dim != form.dim:
        raise DimensionError(f"region dim {region.dim} != control dim {form.dim}")
    if region.frozen:
        p = region.frozen_point
        return form.value(p), p.copy()
    if region.dim == 1:
        lo, hi = region.interval()
        if lo > hi:
            raise EmptyRegionError(f"admissible interval is empty ({lo} > {hi})")
        val, t = _max_quadratic_on_interval(form.constant, float(form.linear[0]),
                                            float(form.quadratic[0, 0]), lo, hi)
        return val, np.array([t])
    live = [h for h in region.requests if np.max(np.abs(h.normal)) > NEGLIGIBLE_NORMAL]
    for h in region.requests:
        if np.max(np.abs(h.normal)) <= NEGLIGIBLE_NORMAL and h.offset < 0.0:
            raise EmptyRegionError("a degenerate request excludes every control")
    starts = [box_center(region.box)] + box_vertices(region.box)
    best_val, best_u = -np.inf, None
    for s in starts:
        feasible = project_point(s, region.box, live)
        val, u = _coordinate_ascent(form, region, feasible, tol, cap)
        if val > best_val:
            best_val, best_u = val, u
    return best_val, best_u
