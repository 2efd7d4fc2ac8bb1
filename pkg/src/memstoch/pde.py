"""Finite-volume solver for the coupled advection-reaction master
equations of the series memristor-capacitor circuit.

Each of the G state densities p_i(q, t) is advected along the charge
axis with velocity (V(t) - q/C)/R_i (conservative first-order upwind)
and exchanges mass with adjacent states through the voltage-dependent
switching rates (exact 2x2 matrix exponential per cell for binary
devices, capped explicit update for G > 2).  Grid bounds are chosen so
the drift points inward at both edges, making zero-flux boundaries
exact and conserving mass to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .circuit import Waveform
from .device import MemristorModel

CFL_LIMIT = 0.9
RATE_DT_LIMIT = 0.5


class StepSizeError(ValueError):
    """Requested dt violates a stability constraint."""

    def __init__(self, message: str, admissible_dt: float):
        self.admissible_dt = admissible_dt
        super().__init__(f"{message} (admissible dt <= {admissible_dt:g} s)")


class MassLossError(RuntimeError):
    """Probability mass left the grid beyond tolerance."""


@dataclass(frozen=True)
class ChargeGrid:
    """Uniform 1-D grid of cell-averaged charge densities."""

    q_min: float
    q_max: float
    n_cells: int

    def __post_init__(self):
        if self.q_max <= self.q_min:
            raise ValueError("need q_max > q_min")
        if self.n_cells < 8:
            raise ValueError("need at least 8 cells")

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.n_cells

    def centers(self) -> np.ndarray:
        return self.q_min + (np.arange(self.n_cells) + 0.5) * self.dq

    def faces(self) -> np.ndarray:
        return self.q_min + np.arange(self.n_cells + 1) * self.dq

    @classmethod
    def for_drive(cls, C: float, waveform: Waveform, t_end: float,
                  n_cells: int, q_extra: float = 0.0,
                  pad: float = 0.1) -> "ChargeGrid":
        """Grid covering the dynamically reachable charges, padded so the
        drift is inward at both boundaries for all t in [0, t_end].

        q_extra extends the covered range to include e.g. the initial
        charge.  Raises if the waveform range makes inward drift at the
        boundaries impossible to guarantee.
        """
        vmin, vmax = waveform.bounds(t_end)
        lo = min(0.0, q_extra, C * vmin)
        hi = max(C * vmax, q_extra)
        span = hi - lo
        if span <= 0:
            span = max(abs(hi), 1.0) * 0.1
        grid = cls(lo - pad * span, hi + pad * span, n_cells)
        # inward drift: v(q_min) = (V - q_min/C)/R > 0 and v(q_max) < 0
        if not (grid.q_min < C * vmin and grid.q_max > C * vmax):
            raise ValueError("grid bounds do not guarantee inward drift")
        return grid


@dataclass
class DistributionField:
    """G arrays of cell-averaged densities on a shared charge grid."""

    grid: ChargeGrid
    p: np.ndarray  # shape (G, n_cells), units 1/coulomb
    time: float = 0.0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.ndim != 2 or self.p.shape[1] != self.grid.n_cells:
            raise ValueError("p must have shape (G, n_cells)")

    @property
    def num_states(self) -> int:
        return self.p.shape[0]

    def mass(self) -> float:
        return float(self.p.sum() * self.grid.dq)

    def marginals(self) -> np.ndarray:
        """Per-state occupation probabilities."""
        return self.p.sum(axis=1) * self.grid.dq

    def conditional_moments(self) -> tuple:
        """Per-state conditional mean and variance of q (nan if the
        state carries no mass)."""
        qc = self.grid.centers()
        w = self.p * self.grid.dq
        mass = w.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = (w * qc).sum(axis=1) / mass
            var = (w * qc ** 2).sum(axis=1) / mass - mean ** 2
        mean[mass <= 0] = np.nan
        var[mass <= 0] = np.nan
        return mean, np.maximum(var, 0.0)

    @classmethod
    def from_delta(cls, grid: ChargeGrid, num_states: int, state: int,
                   q0: float, time: float = 0.0) -> "DistributionField":
        """All mass in the single cell containing q0 (mass-preserving
        deposition of a delta initial condition)."""
        if not grid.q_min <= q0 <= grid.q_max:
            raise ValueError("q0 outside the grid")
        p = np.zeros((num_states, grid.n_cells))
        cell = min(int((q0 - grid.q_min) / grid.dq), grid.n_cells - 1)
        p[state, cell] = 1.0 / grid.dq
        return cls(grid, p, time)

    @classmethod
    def from_uniform(cls, grid: ChargeGrid, num_states: int, state: int,
                     q_alpha: float, q_beta: float,
                     time: float = 0.0) -> "DistributionField":
        """Step density on (q_alpha, q_beta), cell-averaged exactly via
        overlap fractions."""
        if not (grid.q_min <= q_alpha < q_beta <= grid.q_max):
            raise ValueError("interval outside the grid")
        faces = grid.faces()
        overlap = (np.minimum(faces[1:], q_beta)
                   - np.maximum(faces[:-1], q_alpha)).clip(min=0.0)
        p = np.zeros((num_states, grid.n_cells))
        p[state] = overlap / (q_beta - q_alpha) / grid.dq
        return cls(grid, p, time)


@dataclass(frozen=True)
class SeriesCircuitParams:
    """Parameters of the series source-memristor-capacitor circuit as
    seen by the PDE: capacitance and drive waveform; the per-state
    resistances come from the memristor model."""

    C: float
    waveform: Waveform

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")


def drift_velocity(i: int, q, t: float, params: SeriesCircuitParams,
                   model: MemristorModel):
    """Advection velocity of state i at charge q: (V(t) - q/C)/R_i."""
    r = model.resistance(i)
    return (params.waveform(t) - np.asarray(q) / params.C) / r


def admissible_dt(field: DistributionField, params: SeriesCircuitParams,
                  model: MemristorModel) -> float:
    """Largest dt satisfying both the CFL and the reaction-rate caps at
    the field's current time."""
    t = field.time
    faces = field.grid.faces()
    vmax = 0.0
    for i in range(field.num_states):
        vmax = max(vmax, float(np.abs(drift_velocity(i, faces, t, params, model)).max()))
    dt_cfl = CFL_LIMIT * field.grid.dq / vmax if vmax > 0 else math.inf
    qc = field.grid.centers()
    vm = params.waveform(t) - qc / params.C
    exit_max = 0.0
    for i in range(field.num_states):
        tot = np.zeros_like(qc)
        if i < field.num_states - 1:
            tot += model.rate_up_array(i, vm)
        if i > 0:
            tot += model.rate_down_array(i, vm)
        exit_max = max(exit_max, float(tot.max()))
    dt_rate = RATE_DT_LIMIT / exit_max if exit_max > 0 else math.inf
    return min(dt_cfl, dt_rate)


def step(field: DistributionField, dt: float, params: SeriesCircuitParams,
         model: MemristorModel) -> DistributionField:
    """One Lie-split step: conservative upwind advection per state, then
    the reaction substep coupling adjacent states.

    Refuses dt beyond the CFL cap (0.9) or the rate cap
    (max exit rate * dt <= 0.5), carrying the admissible dt.  Mass is
    conserved to round-off and no cell goes negative.
    """
    if model.num_states != field.num_states:
        raise ValueError("model/field state-count mismatch")
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0.0:
        return DistributionField(field.grid, field.p.copy(), field.time)
    dt_ok = admissible_dt(field, params, model)
    if dt > dt_ok:
        raise StepSizeError(f"dt = {dt:g} s too large", dt_ok)

    grid = field.grid
    t = field.time
    faces = grid.faces()
    p = field.p.copy()

    # ---- advection: upwind fluxes at interior faces, zero at boundaries
    for i in range(field.num_states):
        v = drift_velocity(i, faces[1:-1], t, params, model)
        left = p[i, :-1]
        right = p[i, 1:]
        flux = np.where(v > 0, v * left, v * right)
        div = np.zeros(grid.n_cells)
        div[:-1] += flux
        div[1:] -= flux
        p[i] -= dt / grid.dq * div

    # ---- reaction at cell centers
    qc = grid.centers()
    vm = params.waveform(t) - qc / params.C
    if field.num_states == 2:
        a = model.rate_up_array(0, vm)      # 0 -> 1
        b = model.rate_down_array(1, vm)    # 1 -> 0
        s = a + b
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(s > 0, -np.expm1(-s * dt) / np.where(s > 0, s, 1.0), dt)
        transfer = (a * p[0] - b * p[1]) * w
        p[0] -= transfer
        p[1] += transfer
    else:
        up = [model.rate_up_array(i, vm) for i in range(field.num_states - 1)]
        down = [model.rate_down_array(i + 1, vm) for i in range(field.num_states - 1)]
        dp = np.zeros_like(p)
        for i in range(field.num_states - 1):
            flow = up[i] * p[i] - down[i] * p[i + 1]
            dp[i] -= flow
            dp[i + 1] += flow
        p += dt * dp

    min_val = float(p.min())
    if min_val < -1e-12 * max(float(p.max()), 1.0):
        raise RuntimeError(
            f"positivity violated: min cell value {min_val:g} at t = {t:g} s")
    np.clip(p, 0.0, None, out=p)  # round-off-level negatives only
    return DistributionField(grid, p, t + dt)


@dataclass
class PdeResult:
    """Time series produced by run(): marginals and conditional charge
    moments per state, plus the stored fields at output instants."""

    times: np.ndarray            # (T,)
    marginals: np.ndarray        # (T, G)
    cond_mean: np.ndarray        # (T, G)
    cond_var: np.ndarray         # (T, G)
    fields: list                 # DistributionField at each output time
    min_cell_value: float
    max_mass_error: float


def run(initial: DistributionField, t_end: float,
        output_times: Sequence[float], params: SeriesCircuitParams,
        model: MemristorModel,
        mass_tolerance: float = 1e-6) -> PdeResult:
    """Advance the field to t_end, recording marginals and conditional
    moments at the requested output times.

    Raises MassLossError if more than mass_tolerance of the initial mass
    leaks (indicating boundary outflow).
    """
    outputs = sorted(set(float(t) for t in output_times) | {float(t_end)})
    if outputs[0] < initial.time:
        raise ValueError("output time before the initial time")
    field = DistributionField(initial.grid, initial.p.copy(), initial.time)
    mass0 = field.mass()

    times, marg, mean, var, fields = [], [], [], [], []
    min_cell = float(field.p.min())
    max_mass_err = 0.0

    def record(f):
        times.append(f.time)
        marg.append(f.marginals())
        m, v = f.conditional_moments()
        mean.append(m)
        var.append(v)
        fields.append(DistributionField(f.grid, f.p.copy(), f.time))

    if outputs[0] == field.time:
        record(field)
        outputs = outputs[1:]

    for t_out in outputs:
        while field.time < t_out - 1e-15 * max(t_out, 1.0):
            dt = min(admissible_dt(field, params, model), t_out - field.time)
            field = step(field, dt, params, model)
            min_cell = min(min_cell, float(field.p.min()))
            err = abs(field.mass() - mass0)
            max_mass_err = max(max_mass_err, err)
            if err > mass_tolerance:
                raise MassLossError(
                    f"mass error {err:g} exceeds {mass_tolerance:g} at "
                    f"t = {field.time:g} s (boundary outflow?)")
        field.time = t_out  # snap round-off
        record(field)

    return PdeResult(np.array(times), np.vstack(marg), np.vstack(mean),
                     np.vstack(var), fields, min_cell, max_mass_err)
