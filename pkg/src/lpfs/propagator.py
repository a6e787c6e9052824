"""Evolution operator, Poincare map, mild solutions and adjoint sweeps.

All integrations use classical fixed-step RK4. For a linear right-hand side
one RK4 step is a matrix polynomial in the stage coefficients, so the step
maps are formed in batch and only their product is sequential. Stage
coefficients are sampled as right limits at step starts and left limits at
step ends, which keeps fourth order between jumps placed on grid nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ScenarioError
from .system import Coefficient, ControlSubspace, PeriodicSystem, SampledControl


@dataclass(frozen=True)
class Monodromy:
    matrix: np.ndarray
    base_time: float
    integrator_steps: int
    convergence_witness: float  # max entry change under step doubling, relative to max(1, |P|)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), n, ...) samples


# ------------------------------------------------------------------ stage data


def stage_times(t0: float, h: float, n: int) -> np.ndarray:
    i = np.arange(n)
    return np.stack([t0 + i * h, t0 + (i + 0.5) * h, t0 + (i + 1) * h], axis=1)


def sample_stages(coef: Coefficient, times: np.ndarray) -> np.ndarray:
    """Stage values for ``times`` of shape (n, 3): right limit, midpoint, left limit."""
    a = coef.sample(times[:, 0], side=1)
    m = coef.sample(times[:, 1], side=1)
    b = coef.sample(times[:, 2], side=-1)
    return np.stack([a, m, b], axis=1)


def periodic_stages(system: PeriodicSystem, which: str, refine: int = 1) -> np.ndarray:
    """Cached stage table over one period for ``which`` in {'M', 'D'}."""
    key = ("stages", which, refine)
    if key not in system._cache:
        P = system.grid.samples_per_period * refine
        times = stage_times(0.0, system.period / P, P)
        coef = system.drift if which == "M" else system.input
        table = sample_stages(coef, times)
        table.setflags(write=False)
        system._cache[key] = table
    return system._cache[key]


@dataclass(frozen=True)
class StepPlan:
    t0: float
    h: float
    nsteps: int
    start: int | None  # index into the periodic table, None for off-grid plans
    period_steps: int

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.nsteps + 1) * self.h

    def indices(self) -> np.ndarray:
        return (self.start + np.arange(self.nsteps)) % self.period_steps


def plan_steps(system: PeriodicSystem, s: float, t: float, refine: int = 1) -> StepPlan:
    if t < s:
        raise ScenarioError(f"propagation needs s <= t, got s={s}, t={t}")
    P = system.grid.samples_per_period * refine
    h = system.period / P
    if system.grid.is_node(s, refine) and system.grid.is_node(t, refine):
        i0, i1 = round(s / h), round(t / h)
        return StepPlan(i0 * h, h, i1 - i0, i0 % P, P)
    n = max(1, math.ceil((t - s) / h - 1e-9))
    return StepPlan(s, (t - s) / n, n, None, P)


def plan_stages(system: PeriodicSystem, which: str, plan: StepPlan, refine: int = 1) -> np.ndarray:
    if plan.start is not None:
        return periodic_stages(system, which, refine)[plan.indices()]
    coef = system.drift if which == "M" else system.input
    return sample_stages(coef, stage_times(plan.t0, plan.h, plan.nsteps))


# ---------------------------------------------------------------- step maps


def rk4_maps(A: np.ndarray, h: float) -> np.ndarray:
    """One-step RK4 maps for ``y' = A(t) y`` from stage arrays ``A`` of shape (n, 3, k, k)."""
    a, m, b = A[:, 0], A[:, 1], A[:, 2]
    eye = np.eye(A.shape[-1])
    k1 = a
    k2 = m + 0.5 * h * (m @ k1)
    k3 = m + 0.5 * h * (m @ k2)
    k4 = b + h * (b @ k3)
    return eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_maps_backward(A: np.ndarray, h: float) -> np.ndarray:
    """RK4 maps carrying ``z(t_{i+1})`` to ``z(t_i)`` for ``z' = A(t) z`` (step ``-h``)."""
    a, m, b = A[:, 0], A[:, 1], A[:, 2]
    eye = np.eye(A.shape[-1])
    k1 = b
    k2 = m - 0.5 * h * (m @ k1)
    k3 = m - 0.5 * h * (m @ k2)
    k4 = a - h * (a @ k3)
    return eye - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_affine(A: np.ndarray, F: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Maps ``(R_i, c_i)`` with ``y_{i+1} = R_i y_i + c_i`` for ``y' = A y + f``.

    ``F`` has shape (n, 3, k) and holds the forcing at the stages.
    """
    R = rk4_maps(A, h)
    a, m, b = A[:, 0], A[:, 1], A[:, 2]
    f1, f2, f4 = F[:, 0, :, None], F[:, 1, :, None], F[:, 2, :, None]
    k1 = f1
    k2 = 0.5 * h * (m @ k1) + f2
    k3 = 0.5 * h * (m @ k2) + f2
    k4 = h * (b @ k3) + f4
    c = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return R, c[..., 0]


def chain(maps: np.ndarray, Y0: np.ndarray) -> np.ndarray:
    Y = np.array(Y0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):  # overflow surfaces through _check
        for R in maps:
            Y = R @ Y
    return Y


def chain_path(maps: np.ndarray, Y0: np.ndarray) -> np.ndarray:
    out = np.empty((maps.shape[0] + 1,) + np.shape(Y0))
    out[0] = Y0
    with np.errstate(over="ignore", invalid="ignore"):
        for i, R in enumerate(maps):
            out[i + 1] = R @ out[i]
    return out


def _check(Y: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(Y)):
        raise NumericalError("propagation produced non-finite values")
    return Y


# -------------------------------------------------------------------- public


def step_maps(system: PeriodicSystem, s: float, t: float, refine: int = 1) -> tuple[StepPlan, np.ndarray]:
    plan = plan_steps(system, s, t, refine)
    if plan.start is not None:
        key = ("maps", refine)
        if key not in system._cache:
            table = rk4_maps(periodic_stages(system, "M", refine), system.period / plan.period_steps)
            table.setflags(write=False)
            system._cache[key] = table
        return plan, system._cache[key][plan.indices()]
    return plan, rk4_maps(plan_stages(system, "M", plan), plan.h)


def propagate(system: PeriodicSystem, s: float, t: float, Y0, *, refine: int = 1) -> np.ndarray:
    """``Phi(t, s) @ Y0`` by RK4 with step ``T / (samples_per_period * refine)``."""
    Y0 = np.asarray(Y0, dtype=float)
    if Y0.shape[0] != system.n_x:
        raise ScenarioError(f"Y0 has {Y0.shape[0]} rows, expected {system.n_x}")
    if t == s:
        return np.array(Y0)
    _, maps = step_maps(system, s, t, refine)
    return _check(chain(maps, Y0))


def transition(system: PeriodicSystem, t: float, s: float, *, refine: int = 1) -> np.ndarray:
    return propagate(system, s, t, np.eye(system.n_x), refine=refine)


def transition_path(system: PeriodicSystem, s: float, t: float) -> Trajectory:
    """``Phi(t_i, s)`` at every step node between ``s`` and ``t``."""
    plan, maps = step_maps(system, s, t)
    return Trajectory(plan.times, _check(chain_path(maps, np.eye(system.n_x))))


def monodromy(system: PeriodicSystem, t0: float = 0.0) -> Monodromy:
    """Poincare map ``Phi(t0 + T, t0)`` with a step-doubling convergence witness."""
    if not 0.0 <= t0 < system.period:
        raise ScenarioError("monodromy base time must lie in [0, T)")
    key = ("monodromy", float(t0))
    if key in system._cache:
        return system._cache[key]
    P1 = transition(system, t0 + system.period, t0)
    P2 = transition(system, t0 + system.period, t0, refine=2)
    witness = float(np.max(np.abs(P1 - P2)) / max(1.0, float(np.max(np.abs(P1)))))
    P1.setflags(write=False)
    mono = Monodromy(P1, float(t0), system.grid.samples_per_period, witness)
    system._cache[key] = mono
    return mono


def forcing_stages(system: PeriodicSystem, Z: ControlSubspace, u: SampledControl,
                   plan: StepPlan) -> np.ndarray:
    """Stage values of ``D(t) Pi_Z u(t)``; sides follow the stage convention."""
    times = stage_times(plan.t0, plan.h, plan.nsteps)
    D = plan_stages(system, "D", plan) @ Z.projector(system.n_u)
    U = np.stack([u(times[:, 0], 1), u(times[:, 1], 1), u(times[:, 2], -1)], axis=1)
    return np.einsum("nsij,nsj->nsi", D, U)


def mild_solution(system: PeriodicSystem, Z: ControlSubspace | None, s: float, h, u: SampledControl | None,
                  t_end: float) -> Trajectory:
    """Trajectory of ``y' = M y + D Pi_Z u`` from ``y(s) = h``, sampled on the step nodes."""
    Z = system.control_subspace if Z is None else Z
    h = np.asarray(h, dtype=float).reshape(system.n_x)
    plan = plan_steps(system, s, t_end)
    if t_end == s:
        return Trajectory(np.array([s]), h[None].copy())
    if u is None:
        u = SampledControl.zero(system.n_u, t_end)
    if u.n_u != system.n_u:
        raise ScenarioError(f"control has {u.n_u} components, expected {system.n_u}")
    if not u.covers(s, t_end):
        raise ScenarioError("control grid does not cover the integration interval")
    _, R = step_maps(system, s, t_end)
    c = rk4_affine(plan_stages(system, "M", plan), forcing_stages(system, Z, u, plan), plan.h)[1]
    out = np.empty((plan.nsteps + 1, system.n_x))
    out[0] = h
    for i in range(plan.nsteps):
        out[i + 1] = R[i] @ out[i] + c[i]
    return Trajectory(plan.times, _check(out))


def adjoint_propagate(system: PeriodicSystem, t_end: float, xi, *, refine: int = 1) -> Trajectory:
    """``psi(s) = Phi(t_end, s)^T xi`` on the step nodes of [0, t_end].

    Integrates ``psi' = -M^T psi`` backward by RK4; states are returned in
    ascending time.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[0] != system.n_x:
        raise ScenarioError(f"xi has {xi.shape[0]} rows, expected {system.n_x}")
    if t_end < 0:
        raise ScenarioError("adjoint end time must be non-negative")
    if t_end == 0:
        return Trajectory(np.array([0.0]), np.array(xi)[None])
    plan = plan_steps(system, 0.0, t_end, refine)
    A = -np.swapaxes(plan_stages(system, "M", plan, refine), -1, -2)
    maps = rk4_maps_backward(A, plan.h)
    out = np.empty((plan.nsteps + 1,) + xi.shape)
    out[-1] = xi
    for i in range(plan.nsteps - 1, -1, -1):
        out[i] = maps[i] @ out[i + 1]
    return Trajectory(plan.times, _check(out))
