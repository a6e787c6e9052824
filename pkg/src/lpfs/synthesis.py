"""Feedback synthesis: deadbeat on the unstable part, finite-horizon LQ, periodic Riccati.

Riccati sweeps run backward on a half-step grid (step ``h/2``) so that gains
are stored at every RK4 stage time of the propagator grid and closed-loop
simulation on that grid samples them exactly. Each sweep step applies one RK4
step of the linear Hamiltonian system and maps back to the Riccati variable
(see :mod:`lpfs._sweep`); this avoids the step-size limit that the ``1/eps``
quadratic term would impose on a direct RK4 integration of the Riccati ODE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._interp import PiecewiseLinear
from ._sweep import BLOWUP, mobius_sweep
from .attainability import RANK_TOL, StabilizabilityCertificate, certify
from .errors import (BorderlineError, ConvergenceError, NotStabilizableError, NumericalError,
                     RiccatiBlowUpError, ScenarioError, UndecidableError, VerificationError)
from .propagator import (adjoint_propagate, chain_path, mild_solution, monodromy, periodic_stages,
                         rk4_maps, rk4_maps_backward, sample_stages, stage_times)
from .spectral import SpectralSplit, decay_constant, split
from .system import Coefficient, ControlSubspace, PeriodicSystem, SampledControl, TimeGrid

HALF = 2  # sweep refinement: gains live on the half-step grid
REPORT_MARGIN = 1e-6
# value-iteration iterates above this are treated as diverging; the Mobius sweep loses
# precision near 1e11, so unbounded growth can stall just short of a larger cap
_DIVERGED = 1e10


# ------------------------------------------------------------------ data types


@dataclass(frozen=True, eq=False)
class FeedbackLaw:
    """Sampled periodic gain ``K(t)`` (``m0 x n_x``, Z coordinates); ``u = basis @ K(t) @ y``."""

    period: float
    nodes: np.ndarray
    gains: np.ndarray  # (len(nodes), m0, n_x)
    control_basis: np.ndarray  # (n_u, m0)
    provenance: str
    epsilon: float | None = None
    N: int | None = None
    _interp: PiecewiseLinear | None = field(default=None, repr=False)

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=float)
        if g.ndim != 3 or g.shape[0] != len(self.nodes):
            raise ScenarioError("gains must have one m0 x n_x matrix per node")
        if not np.all(np.isfinite(g)):
            raise ScenarioError("feedback gains must be finite")
        b = np.asarray(self.control_basis, dtype=float)
        if b.ndim != 2 or b.shape[1] != g.shape[1]:
            raise ScenarioError("control basis column count must match the gain rows")
        nodes = np.asarray(self.nodes, dtype=float)
        if abs(nodes[0]) > 1e-12 * self.period or abs(nodes[-1] - self.period) > 1e-9 * self.period:
            raise ScenarioError("gain nodes must cover [0, period]")
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "control_basis", b)
        object.__setattr__(self, "_interp", PiecewiseLinear(nodes, g))

    @property
    def n_x(self) -> int:
        return self.gains.shape[2]

    @property
    def m0(self) -> int:
        return self.gains.shape[1]

    def gain(self, times, side: int = 1) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        tau = np.mod(times, self.period)
        tol = 1e-12 * self.period
        tau = np.where(tau > self.period - tol, 0.0, tau) if side >= 0 else np.where(tau < tol, self.period, tau)
        return self._interp(tau, side)

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "grid_nodes": self.nodes.tolist(),
            "gains": [k.ravel().tolist() for k in self.gains],
            "control_basis": self.control_basis.tolist(),
            "provenance": self.provenance,
            "epsilon": self.epsilon,
            "N": self.N,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeedbackLaw":
        keys = ("period", "grid_nodes", "gains", "control_basis", "provenance", "epsilon", "N")
        for k in d:
            if k not in keys:
                raise ScenarioError(f"unknown key {k!r} in feedback law")
        for k in ("period", "grid_nodes", "gains", "control_basis", "provenance"):
            if k not in d:
                raise ScenarioError(f"missing key {k!r} in feedback law")
        basis = np.asarray(d["control_basis"], dtype=float)
        if basis.ndim != 2:
            raise ScenarioError("control_basis must be a matrix")
        m0 = basis.shape[1]
        flat = np.asarray(d["gains"], dtype=float)
        if flat.ndim != 2 or m0 == 0 or flat.shape[1] % m0:
            raise ScenarioError("gains must be row-major m0 x n_x matrices")
        gains = flat.reshape(flat.shape[0], m0, flat.shape[1] // m0)
        return cls(float(d["period"]), np.asarray(d["grid_nodes"], dtype=float), gains, basis,
                   str(d["provenance"]), d.get("epsilon"), d.get("N"))


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    times: np.ndarray
    Q: np.ndarray  # (len(times), n, n)
    terminal: np.ndarray
    state_weight: float  # 0 or 1 (times identity)
    control_weight: float  # eps or 1 (times identity)
    closed_loop_transition: np.ndarray | None = None
    iterations: int = 0
    trace: tuple = ()
    iterates: tuple = ()

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        return self.Q[i]


@dataclass(frozen=True, eq=False)
class ClosedLoopReport:
    period: float
    multipliers: np.ndarray
    spectral_radius: float
    decay_rate: float
    overshoot: float
    stable: bool
    report_margin: float
    integration_refine: int
    monodromy: np.ndarray

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "spectral_radius": self.spectral_radius,
            "stable": self.stable,
            "decay_rate": self.decay_rate,
            "overshoot": self.overshoot,
            "report_margin": self.report_margin,
            "integration_refine": self.integration_refine,
            "multipliers_re": [float(z.real) for z in self.multipliers],
            "multipliers_im": [float(z.imag) for z in self.multipliers],
        }


@dataclass(frozen=True, eq=False)
class HorizonBounds:
    delta0: float
    rho0: float
    C_rho0: float
    C: float
    L_norm: float
    P_norm: float
    Q_norm: float  # |I - P|
    N0: int
    eps0: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("delta0", "rho0", "C_rho0", "C", "L_norm", "P_norm",
                                               "Q_norm", "N0", "eps0")}


# ---------------------------------------------------------------- half-grid tools


def _half_nodes(system: PeriodicSystem, t_end: float) -> np.ndarray:
    n = round(t_end / (system.grid.step / HALF))
    return np.arange(n + 1) * (system.grid.step / HALF)


def _sided(values_right: np.ndarray, values_left: np.ndarray, times: np.ndarray):
    """Merge left/right samples into (nodes, values) with repeated nodes at jumps."""
    nodes, vals = [], []
    last = len(times) - 1
    for j, t in enumerate(times):
        l, r = values_left[j], values_right[j]
        if j > 0 and j < last and not np.array_equal(l, r):
            nodes += [t, t]
            vals += [l, r]
        else:
            nodes.append(t)
            vals.append(l if j == last else r)
    return np.array(nodes), np.array(vals)


# ------------------------------------------------------------------- deadbeat


@dataclass(frozen=True, eq=False)
class DeadbeatMap:
    """``h1 -> u`` driving ``P y(n0 T)`` to zero with the minimum-norm control in Z."""

    E: np.ndarray  # orthonormal basis of H1 (n x n0)
    A_hat: np.ndarray  # monodromy in E coordinates
    times: np.ndarray  # half-step nodes on [0, n0 T]
    B_right: np.ndarray  # (len(times), n0, m0)
    B_left: np.ndarray
    gram: np.ndarray  # Simpson quadrature of int Bhat Bhat^T
    basis: np.ndarray  # Z basis (n_u x m0)
    horizon: float

    @property
    def n0(self) -> int:
        return self.E.shape[1]

    @property
    def weight(self) -> np.ndarray:
        """``gram^{-1} A_hat^{n0}``."""
        return np.linalg.solve(self.gram, np.linalg.matrix_power(self.A_hat, self.n0))

    def coefficients(self, h1) -> tuple[np.ndarray, np.ndarray]:
        """Z coordinates of the control at each node, (right limits, left limits)."""
        a = self.E.T @ np.asarray(h1, dtype=float)
        w = self.weight @ a
        br = -np.einsum("jkm,k->jm", self.B_right, w)
        bl = -np.einsum("jkm,k->jm", self.B_left, w)
        return br, bl

    def __call__(self, h1) -> SampledControl:
        br, bl = self.coefficients(h1)
        nodes, vals = _sided(br @ self.basis.T, bl @ self.basis.T, self.times)
        return SampledControl(nodes, vals)

    def operator_norm(self) -> float:
        """``|L|`` from ``|L h1|^2 = a^T (A^n0)^T gram^{-1} A^n0 a``."""
        An = np.linalg.matrix_power(self.A_hat, self.n0)
        M = An.T @ np.linalg.solve(self.gram, An)
        return float(np.sqrt(max(np.linalg.eigvalsh(0.5 * (M + M.T))[-1], 0.0)))


def deadbeat_unstable(system: PeriodicSystem, Z: ControlSubspace | None, sp: SpectralSplit,
                      tol: float = RANK_TOL) -> DeadbeatMap:
    """Build the deadbeat-on-unstable control map on [0, n0 T]."""
    Z = system.control_subspace if Z is None else Z
    if sp.n0 == 0:
        raise ScenarioError("no unstable multipliers: deadbeat control is not needed")
    cert = certify(system, sp, Z, tol)
    if not cert.verdict_b:
        raise NotStabilizableError("certificate (b) is false: unstable part is not reachable", cert)
    E = sp.basis_H1
    n0 = sp.n0
    t_end = n0 * system.period
    psi = adjoint_propagate(system, t_end, sp.P.T @ E, refine=HALF)
    times = psi.times
    basis = Z.matrix(system.n_u)
    Dr = system.input.sample(times, 1) @ basis
    Dl = system.input.sample(times, -1) @ basis
    PsiT = np.swapaxes(psi.states, 1, 2)
    Br = PsiT @ Dr
    Bl = PsiT @ Dl
    h = system.grid.step
    outer = lambda B: B @ np.swapaxes(B, 1, 2)
    f_r, f_l = outer(Br), outer(Bl)
    gram = (h / 6.0) * (f_r[0:-1:2].sum(0) + 4.0 * f_r[1::2].sum(0) + f_l[2::2].sum(0))
    gram = 0.5 * (gram + gram.T)
    if np.linalg.eigvalsh(gram)[0] <= 0:
        raise NumericalError("deadbeat Gramian is not positive definite despite a true certificate")
    A_hat = E.T @ sp.monodromy @ E
    return DeadbeatMap(E, A_hat, times, Br, Bl, gram, basis, t_end)


def deadbeat_residual(system: PeriodicSystem, sp: SpectralSplit, db: DeadbeatMap, h1) -> float:
    """``|P y(n0 T)| / |h1|`` from a forward simulation with the deadbeat control."""
    h1 = np.asarray(h1, dtype=float)
    traj = mild_solution(system, ControlSubspace.full(), 0.0, h1, db(h1), db.horizon)
    return float(np.linalg.norm(sp.P @ traj.states[-1]) / max(np.linalg.norm(h1), 1e-300))


# -------------------------------------------------------------- horizon and eps


def horizon_and_epsilon(system: PeriodicSystem, Z: ControlSubspace | None, sp: SpectralSplit,
                        db: DeadbeatMap | None) -> HorizonBounds:
    """Constants of the finite-horizon argument, estimated from the constructed objects."""
    delta0 = 0.5 * (1.0 + sp.delta_bar)
    rho0 = -math.log(delta0) / system.period
    P_norm = float(np.linalg.norm(sp.P, 2))
    Q_norm = float(np.linalg.norm(np.eye(sp.n_x) - sp.P, 2))
    if sp.n0 == 0 or db is None:
        return HorizonBounds(delta0, rho0, 1.0, 0.0, 0.0, P_norm, Q_norm, 0, float("inf"))
    C_rho0 = decay_constant(sp, delta0)
    ends = []
    for j in range(sp.n0):
        eta = db.E[:, j]
        ends.append(mild_solution(system, ControlSubspace.full(), 0.0, eta, db(eta), db.horizon).states[-1])
    C = float(np.linalg.norm(np.column_stack(ends), 2))
    L = db.operator_norm()
    inner = C * delta0 ** (-sp.n0) * P_norm + Q_norm
    if inner <= 0 or C_rho0 <= 0:
        N0 = sp.n0
    else:
        r = (math.log(C_rho0) + math.log(inner)) / math.log(1.0 / delta0)
        N0 = max(math.ceil(r + 2.0 - 1e-12), sp.n0)
    eps0 = (delta0 - delta0 ** 2) / (L * P_norm + 1.0) ** 2
    return HorizonBounds(delta0, rho0, C_rho0, C, L, P_norm, Q_norm, int(N0), eps0)


# --------------------------------------------------------------- Riccati sweeps


def _hamiltonian_maps(system: PeriodicSystem, Z: ControlSubspace, control_weight: float,
                      state_weight: float) -> np.ndarray:
    basis = Z.matrix(system.n_u)
    key = ("hamiltonian", control_weight, state_weight, basis.shape, basis.tobytes())
    if key in system._cache:
        return system._cache[key]
    n = system.n_x
    Ms = periodic_stages(system, "M", HALF)
    DZ = periodic_stages(system, "D", HALF) @ basis
    R = DZ @ np.swapaxes(DZ, -1, -2) / control_weight
    H = np.zeros(Ms.shape[:2] + (2 * n, 2 * n))
    H[..., :n, :n] = Ms
    H[..., :n, n:] = -R
    H[..., n:, :n] = -state_weight * np.eye(n)
    H[..., n:, n:] = -np.swapaxes(Ms, -1, -2)
    full = rk4_maps_backward(H, system.grid.step / HALF)
    maps = np.ascontiguousarray(np.stack([full[:, :n, :n], full[:, :n, n:], full[:, n:, :n], full[:, n:, n:]], axis=1))
    system._cache[key] = maps
    return maps


def _sweep(maps, nsteps, terminal, store_q, store_x):
    q0, qs, xs, status = mobius_sweep(maps, 0, nsteps, np.ascontiguousarray(terminal, dtype=float),
                                      store_q, store_x)
    if status != 0:
        raise RiccatiBlowUpError(f"horizon/eps infeasible: Riccati entries exceeded {BLOWUP:g}")
    return q0, qs, xs


def _gains(system: PeriodicSystem, basis: np.ndarray, times: np.ndarray, Qs: np.ndarray,
           control_weight: float) -> tuple[np.ndarray, np.ndarray]:
    """``K(t) = -(1/w) B^T D(t)^T Q(t)`` at half-step nodes, with repeated nodes at input jumps."""
    Dr = system.input.sample(times, 1) @ basis
    Dl = system.input.sample(times, -1) @ basis
    Kr = -np.swapaxes(Dr, 1, 2) @ Qs / control_weight
    Kl = -np.swapaxes(Dl, 1, 2) @ Qs / control_weight
    return _sided(Kr, Kl, times)


def _closed_loop_product(xs: np.ndarray) -> np.ndarray:
    Phi = np.eye(xs.shape[1])
    for X in xs:
        Phi = np.linalg.solve(X, Phi)
    return Phi


def finite_horizon_riccati(system: PeriodicSystem, Z: ControlSubspace | None, eps: float, N: int,
                           *, store: bool = True) -> tuple[RiccatiSolution, FeedbackLaw | None]:
    """Terminal-cost LQ on [0, NT]: terminal weight I, control weight eps, no state cost.

    The returned solution carries the optimal closed-loop transition over
    [0, NT]; the law is the NT-periodic extension of ``-(1/eps) D^T Q``.
    """
    Z = system.control_subspace if Z is None else Z
    if not eps > 0:
        raise ScenarioError("epsilon must be positive")
    if int(N) != N or N < 1:
        raise ScenarioError("horizon N must be a positive integer")
    N = int(N)
    maps = _hamiltonian_maps(system, Z, float(eps), 0.0)
    nsteps = N * maps.shape[0]
    q0, qs, xs = _sweep(maps, nsteps, np.eye(system.n_x), store, True)
    Phi = _closed_loop_product(xs)
    if not store:
        sol = RiccatiSolution(np.array([0.0]), q0[None], np.eye(system.n_x), 0.0, float(eps), Phi)
        return sol, None
    times = _half_nodes(system, N * system.period)
    sol = RiccatiSolution(times, qs, np.eye(system.n_x), 0.0, float(eps), Phi)
    basis = Z.matrix(system.n_u)
    nodes, gains = _gains(system, basis, times, qs, float(eps))
    law = FeedbackLaw(N * system.period, nodes, gains, basis, "deadbeat-LQ", float(eps), N)
    return sol, law


def periodic_riccati(system: PeriodicSystem, Z: ControlSubspace | None = None, S0=None, tol: float = 1e-10,
                     max_iters: int = 5000, *, keep_iterates: bool = False) -> tuple[RiccatiSolution, FeedbackLaw]:
    """Value iteration ``S -> Q(0)`` of the one-period LQ problem (state cost I, control cost I).

    Converged when ``|S_{k+1} - S_k|_F <= tol (1 + |S_k|_F)``.
    """
    Z = system.control_subspace if Z is None else Z
    n = system.n_x
    S = np.zeros((n, n)) if S0 is None else np.array(S0, dtype=float)
    if S.shape != (n, n) or np.max(np.abs(S - S.T), initial=0.0) > 1e-12 * max(1.0, np.abs(S).max(initial=0.0)):
        raise ScenarioError("seed S0 must be a symmetric n_x x n_x matrix")
    maps = _hamiltonian_maps(system, Z, 1.0, 1.0)
    P = maps.shape[0]
    trace: list[float] = []
    iterates = [S.copy()] if keep_iterates else []
    for it in range(1, max_iters + 1):
        try:
            S_new = _sweep(maps, P, S, False, False)[0]
        except RiccatiBlowUpError:
            raise ConvergenceError("value iteration diverging: consistent with non-stabilizability", trace) from None
        delta = float(np.linalg.norm(S_new - S))
        trace.append(delta)
        if keep_iterates:
            iterates.append(S_new.copy())
        if np.linalg.norm(S_new) > _DIVERGED:
            raise ConvergenceError("value iteration diverging: consistent with non-stabilizability", trace)
        done = delta <= tol * (1.0 + np.linalg.norm(S))
        S = S_new
        if done:
            break
    else:
        raise ConvergenceError(f"periodic Riccati did not converge in {max_iters} iterations", trace)
    _, qs, xs = _sweep(maps, P, S, True, True)
    times = _half_nodes(system, system.period)
    sol = RiccatiSolution(times, qs, S, 1.0, 1.0, _closed_loop_product(xs), it, tuple(trace), tuple(iterates))
    basis = Z.matrix(system.n_u)
    nodes, gains = _gains(system, basis, times, qs, 1.0)
    law = FeedbackLaw(system.period, nodes, gains, basis, "periodic-riccati")
    return sol, law


def zero_law(system: PeriodicSystem, Z: ControlSubspace | None = None) -> FeedbackLaw:
    Z = system.control_subspace if Z is None else Z
    basis = Z.matrix(system.n_u)
    gains = np.zeros((2, basis.shape[1], system.n_x))
    return FeedbackLaw(system.period, np.array([0.0, system.period]), gains, basis, "open-loop")


# --------------------------------------------------------------- closed loop


class _Repeated(Coefficient):
    """A T-periodic coefficient viewed as kT-periodic."""

    def __init__(self, base: Coefficient, period: float):
        self.base = base
        self.period = period
        self.shape = base.shape

    def _sample(self, tau, side):
        return self.base.sample(tau, side)


class ClosedLoopDrift(Coefficient):
    """``M(t) + D(t) B K(t)`` for a sampled feedback law."""

    def __init__(self, system: PeriodicSystem, law: FeedbackLaw):
        self.system = system
        self.law = law
        self.period = law.period
        self.shape = (system.n_x, system.n_x)

    def _sample(self, tau, side):
        M = self.system.drift.sample(tau, side)
        D = self.system.input.sample(tau, side) @ self.law.control_basis
        return M + D @ self.law.gain(tau, side)


def _check_compatible(system: PeriodicSystem, law: FeedbackLaw) -> int:
    ratio = law.period / system.period
    mult = round(ratio)
    if mult < 1 or abs(ratio - mult) > 1e-9 * max(1.0, ratio):
        raise ScenarioError(f"law period {law.period} is not an integer multiple of T = {system.period}")
    if law.n_x != system.n_x or law.control_basis.shape[0] != system.n_u:
        raise ScenarioError("feedback law dimensions do not match the system")
    return mult


def closed_loop_system(system: PeriodicSystem, law: FeedbackLaw, refine: int = 1) -> PeriodicSystem:
    mult = _check_compatible(system, law)
    grid = TimeGrid(law.period, system.grid.samples_per_period * mult * refine)
    return PeriodicSystem(ClosedLoopDrift(system, law), _Repeated(system.input, law.period), grid,
                          system.label, system.control_subspace)


def _stable_refine(system: PeriodicSystem, law: FeedbackLaw) -> int:
    """Smallest power-of-two refinement keeping ``h |A_cl|`` within RK4's comfort zone."""
    mult = _check_compatible(system, law)
    P = system.grid.samples_per_period * mult
    h = law.period / P
    times = stage_times(0.0, h, P)
    A = sample_stages(ClosedLoopDrift(system, law), times)
    lmax = float(np.max(np.linalg.norm(A.reshape(-1, system.n_x, system.n_x), ord=2, axis=(1, 2))))
    r = 1
    while h * lmax / r > 1.5:
        r *= 2
        if r > 1024:
            raise NumericalError("closed loop too stiff for the integration grid")
    return r


def verify_law(system: PeriodicSystem, law: FeedbackLaw, report_margin: float = REPORT_MARGIN,
               fit_periods: int = 6) -> ClosedLoopReport:
    """Closed-loop Floquet analysis of a sampled law by RK4 over the law's period."""
    refine = _stable_refine(system, law)
    cl = closed_loop_system(system, law, refine)
    P = cl.grid.samples_per_period
    h = law.period / P
    A = sample_stages(cl.drift, stage_times(0.0, h, P))
    path = chain_path(rk4_maps(A, h), np.eye(system.n_x))
    if not np.all(np.isfinite(path)):
        raise NumericalError("closed-loop propagation produced non-finite values")
    mono = path[-1]
    eigs = np.linalg.eigvals(mono)
    eigs = eigs[np.lexsort((-eigs.imag, -eigs.real, -np.abs(eigs)))]
    rho = float(np.max(np.abs(eigs)))
    delta = -math.log(max(rho, 1e-300)) / law.period
    times = np.arange(P + 1) * h
    norms = np.linalg.norm(path, ord=2, axis=(1, 2))
    overshoot = 0.0
    Mk = np.eye(system.n_x)
    for k in range(fit_periods):
        nk = np.linalg.norm(path @ Mk, ord=2, axis=(1, 2)) if k else norms
        overshoot = max(overshoot, float(np.max(nk * np.exp(delta * (times + k * law.period)))))
        Mk = mono @ Mk
    return ClosedLoopReport(law.period, eigs, rho, delta, overshoot, bool(rho < 1.0 - report_margin),
                            report_margin, refine, mono)


def simulate_closed_loop(system: PeriodicSystem, law: FeedbackLaw | None, h0, periods: float):
    """Trajectory ``(times, states, controls)`` on the grid; controls in Z coordinates."""
    h0 = np.asarray(h0, dtype=float).reshape(system.n_x)
    if law is None:
        traj = mild_solution(system, None, 0.0, h0, None, periods * system.period)
        m0 = system.control_subspace.dim(system.n_u)
        return traj.times, traj.states, np.zeros((traj.times.size, m0))
    refine = _stable_refine(system, law)
    _check_compatible(system, law)
    steps = round(periods * system.grid.samples_per_period) * refine
    h = system.period / (system.grid.samples_per_period * refine)
    A = sample_stages(ClosedLoopDrift(system, law), stage_times(0.0, h, steps))
    states = chain_path(rk4_maps(A, h), h0)
    times = np.arange(steps + 1) * h
    u = np.einsum("tij,tj->ti", law.gain(times, 1), states)
    keep = slice(None, None, refine)
    return times[keep], states[keep], u[keep]


# ---------------------------------------------------------------- pipeline


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    law: FeedbackLaw
    report: ClosedLoopReport
    certificate: StabilizabilityCertificate
    split: SpectralSplit
    bounds: HorizonBounds
    epsilon: float | None
    N: int
    witness_norm: float
    witness_bound: float
    riccati: RiccatiSolution | None

    @property
    def witness_ok(self) -> bool:
        return self.witness_norm <= self.witness_bound

    def to_dict(self) -> dict:
        return {
            "label": self.certificate.label,
            "closed_loop": self.report.to_dict(),
            "certificate": self.certificate.to_dict(),
            "n0": self.split.n0,
            "delta_bar": self.split.delta_bar,
            "horizon": self.bounds.to_dict(),
            "epsilon": self.epsilon,
            "N": self.N,
            "finite_horizon_closed_loop_norm": self.witness_norm,
            "finite_horizon_bound": self.witness_bound,
            "riccati_iterations": 0 if self.riccati is None else self.riccati.iterations,
        }


def synthesize(system: PeriodicSystem, Z: ControlSubspace | None = None, *, rank_tol: float = RANK_TOL,
               unit_margin: float = 0.0, epsilon: float | None = None, N: int | None = None,
               riccati_tol: float = 1e-10, max_iters: int = 5000, allow_borderline: bool = False,
               report_margin: float = REPORT_MARGIN) -> SynthesisResult:
    """Certify, build the finite-horizon witness, solve the periodic Riccati equation and verify."""
    Z = system.control_subspace if Z is None else Z
    sp = split(monodromy(system), unit_margin)
    if sp.borderline_stable and not allow_borderline:
        raise BorderlineError("a multiplier within 1e-6 of the unit circle was classified stable; "
                              "refusing to synthesize without an explicit override")
    cert = certify(system, sp, Z, rank_tol)
    if cert.undecidable or not cert.agreement:
        raise UndecidableError("certificates are undecidable or disagree", cert)
    if not cert.verdict_b:
        raise NotStabilizableError(f"not stabilizable w.r.t. Z (margin_b = {cert.margin_b:.3e})", cert)
    if sp.n0 == 0:
        law = zero_law(system, Z)
        report = verify_law(system, law, report_margin)
        bounds = horizon_and_epsilon(system, Z, sp, None)
        result = SynthesisResult(law, report, cert, sp, bounds, None, 0, 0.0, math.sqrt(bounds.delta0), None)
    else:
        db = deadbeat_unstable(system, Z, sp, rank_tol)
        bounds = horizon_and_epsilon(system, Z, sp, db)
        eps = bounds.eps0 / 2.0 if epsilon is None else float(epsilon)
        NN = bounds.N0 if N is None else int(N)
        fin, _ = finite_horizon_riccati(system, Z, eps, NN, store=False)
        wnorm = float(np.linalg.norm(fin.closed_loop_transition, 2))
        wbound = math.sqrt(bounds.delta0)
        if wnorm > wbound and eps <= bounds.eps0 and NN >= bounds.N0:
            raise VerificationError(f"finite-horizon witness failed: |Phi_cl(NT,0)| = {wnorm:.6g} > "
                                    f"sqrt(delta0) = {wbound:.6g}")
        sol, law = periodic_riccati(system, Z, None, riccati_tol, max_iters)
        report = verify_law(system, law, report_margin)
        result = SynthesisResult(law, report, cert, sp, bounds, eps, NN, wnorm, wbound, sol)
    if not result.report.stable:
        raise VerificationError(f"synthesis verification failed: closed-loop spectral radius "
                                f"{result.report.spectral_radius:.9g}")
    return result
