"""Concrete systems: 1-D heat equations, the switching scalar example and random test systems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ScenarioError
from .propagator import monodromy
from .spectral import split
from .synthesis import FeedbackLaw
from .system import (ConstantCoefficient, ControlSubspace, CosineCoefficient, FunctionCoefficient,
                     PeriodicSystem, TabulatedCoefficient, build_system, save_scenario)

Profile = Callable[[np.ndarray], np.ndarray] | float


# ----------------------------------------------------------------------- heat


@dataclass(frozen=True)
class HeatSpec:
    """``y_t - y_xx + a(x,t) y = chi_omega u`` on (0,1) with Dirichlet boundary.

    The potential is ``a(x,t) = static(x) + oscillating(x) cos(2 pi t / T)``
    unless ``potential`` (a callable ``a(x, t)``) is given, in which case it
    takes precedence and the drift is evaluated pointwise in time.
    """

    size: int = 5
    period: float = 0.1
    static: Profile = 0.0
    oscillating: Profile = 0.0
    potential: Callable[[np.ndarray, float], np.ndarray] | None = None
    window: tuple[float, float] = (0.2, 0.5)
    discretization: str = "spectral-galerkin"
    control_kind: str = "indicator"
    samples_per_period: int | None = None
    quadrature_points: int = 200
    label: str | None = None

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise ScenarioError("heat size must be a positive integer")
        a, b = self.window
        if not (0.0 <= a < b <= 1.0):
            raise ScenarioError(f"invalid control window omega = ({a}, {b})")
        if self.discretization not in ("spectral-galerkin", "finite-difference"):
            raise ScenarioError(f"unknown discretization {self.discretization!r}")
        if self.control_kind not in ("indicator", "rank-one-mode-1"):
            raise ScenarioError(f"unknown control_kind {self.control_kind!r}")
        if not self.period > 0:
            raise ScenarioError("period must be positive")


def laplacian_eigenvalues(k) -> np.ndarray:
    return (np.pi * np.asarray(k, dtype=float)) ** 2


def sine_mode(k: int, x) -> np.ndarray:
    return math.sqrt(2.0) * np.sin(k * np.pi * np.asarray(x, dtype=float))


def _profile(p: Profile, x: np.ndarray) -> np.ndarray:
    if callable(p):
        return np.broadcast_to(np.asarray(p(x), dtype=float), x.shape)
    return np.full(x.shape, float(p))


def fd_laplacian(m: int) -> np.ndarray:
    """Fourth-order Dirichlet Laplacian on ``m`` interior points.

    Ghost values come from odd reflection about both boundaries, so the sine
    modes remain exact eigenvectors.
    """
    dx = 1.0 / (m + 1)
    c = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * dx * dx)
    L = np.zeros((m, m))
    for i in range(m):
        for off, w in zip(range(-2, 3), c):
            j = i + off
            if 0 <= j < m:
                L[i, j] += w
            elif j == -2:
                L[i, 0] -= w  # u_{-1} = -u_1
            elif j == m + 1:
                L[i, m - 1] -= w
    return L


def _auto_samples(stiffness: float, period: float) -> int:
    s = 256
    while period / s * stiffness > 2.5:
        s *= 2
    return s


def heat_1d(spec: HeatSpec) -> PeriodicSystem:
    n, T = spec.size, spec.period
    lo, hi = spec.window
    if spec.discretization == "spectral-galerkin":
        gx, gw = leggauss(spec.quadrature_points)
        x, w = 0.5 * (gx + 1.0), 0.5 * gw
        modes = np.stack([sine_mode(k, x) for k in range(1, n + 1)])  # (n, q)
        gal = lambda f: (modes * (w * f)) @ modes.T
        base = -np.diag(laplacian_eigenvalues(np.arange(1, n + 1)))
        if spec.potential is not None:
            drift = FunctionCoefficient(lambda t: base - gal(spec.potential(x, t)), T)
        else:
            drift = CosineCoefficient(base - gal(_profile(spec.static, x)), -gal(_profile(spec.oscillating, x)), T)
        if spec.control_kind == "indicator":
            # exact quadrature on the window
            wx, ww = leggauss(spec.quadrature_points)
            xw = lo + (hi - lo) * 0.5 * (wx + 1.0)
            mw = np.stack([sine_mode(k, xw) for k in range(1, n + 1)])
            D = (mw * (0.5 * (hi - lo) * ww)) @ mw.T
        else:
            D = np.zeros((n, n))
            D[0, 0] = 1.0
        stiff = float(laplacian_eigenvalues(n))
        trunc = f"spectral-galerkin, {n} modes"
    else:
        x = np.arange(1, n + 1) / (n + 1)
        L = fd_laplacian(n)
        if spec.potential is not None:
            drift = FunctionCoefficient(lambda t: L - np.diag(spec.potential(x, t)), T)
        else:
            drift = CosineCoefficient(L - np.diag(_profile(spec.static, x)), -np.diag(_profile(spec.oscillating, x)), T)
        if spec.control_kind == "indicator":
            cols = np.flatnonzero((x > lo) & (x < hi))
            if cols.size == 0:
                raise ScenarioError("control window contains no grid points")
            D = np.eye(n)[:, cols]
        else:
            s = sine_mode(1, x)
            D = np.outer(s, s) / (n + 1)
        stiff = float(np.max(np.abs(np.linalg.eigvalsh(L))))
        trunc = f"finite-difference, {n} interior points"
    samples = spec.samples_per_period or _auto_samples(stiff, T)
    label = spec.label or f"heat ({trunc}, T={T:g})"
    if spec.label and "modes" not in label and "points" not in label:
        label = f"{label} ({trunc})"
    return build_system(drift, ConstantCoefficient(D, T), T, samples, label=label)


def counterexample_h1state(modes: int = 3, T: float = 0.1, samples_per_period: int = 256) -> PeriodicSystem:
    """Shifted heat equation ``y_t - y_xx - lambda_2 y = <u, xi_1> xi_1`` in mode coordinates.

    Multipliers are ``exp((lambda_2 - lambda_k) T)``: one above 1 and one equal to 1.
    """
    if modes < 3:
        raise ScenarioError("the counterexample needs at least 3 modes")
    lam = laplacian_eigenvalues(np.arange(1, modes + 1))
    M = np.diag(lam[1] - lam)
    D = np.zeros((modes, modes))
    D[0, 0] = 1.0
    return build_system(M, D, T, samples_per_period,
                        label=f"heat counterexample (spectral-galerkin, {modes} modes, T={T:g})")


# ------------------------------------------------------------------ switching


def switching_scalar(samples_per_period: int = 256):
    """``y' = s(t) u`` with ``s = +1`` on [0,1), ``-1`` on [1,2), T = 2.

    Returns ``(system, stepped_k, constant_k)`` where ``constant_k(c)`` builds the
    constant-gain law ``u = c y``.
    """
    T = 2.0
    system = build_system(np.zeros((1, 1)), TabulatedCoefficient.switching([0.0, 1.0], [[[1.0]], [[-1.0]]], T),
                          T, samples_per_period, label="switching scalar")
    basis = np.eye(1)
    stepped_k = FeedbackLaw(T, np.array([0.0, 1.0, 1.0, 2.0]), np.array([1.0, 1.0, 2.0, 2.0]).reshape(4, 1, 1),
                            basis, "prescribed")

    def constant_k(c: float) -> FeedbackLaw:
        return FeedbackLaw(T, np.array([0.0, T]), np.full((2, 1, 1), float(c)), basis, "prescribed")

    return system, stepped_k, constant_k


# --------------------------------------------------------------------- random


def random_periodic(n_x: int, n_u: int, seed: int, unstable_target: int = 0, *, period: float = 1.0,
                    samples_per_period: int = 256, hidden_unstable: int = 0, attempts: int = 50,
                    max_growth: float = 1e6) -> PeriodicSystem:
    """Random ``A0 + A1 cos(2 pi t/T)`` drift with a constant full-rank input.

    The drift is shifted by a multiple of the identity so that exactly
    ``unstable_target`` multipliers have modulus at least 1.05 and all others
    at most 1/1.05. With ``hidden_unstable = k`` the last ``k`` of those
    unstable multipliers live in a block the input cannot reach, and an
    orthogonal change of coordinates hides the block structure.
    """
    if not (1 <= n_x <= 16 and 1 <= n_u <= n_x):
        raise ScenarioError("random_periodic needs 1 <= n_u <= n_x <= 16")
    if not 0 <= unstable_target <= n_x:
        raise ScenarioError("unstable_target must lie in [0, n_x]")
    if not 0 <= hidden_unstable <= unstable_target or (hidden_unstable and hidden_unstable >= n_x):
        raise ScenarioError("hidden_unstable must not exceed unstable_target and must leave a reachable block")
    rng = np.random.default_rng(seed)
    margin = math.log(1.05)
    k = hidden_unstable
    for _ in range(attempts):
        A0 = rng.standard_normal((n_x, n_x)) / math.sqrt(n_x)
        A1 = rng.standard_normal((n_x, n_x)) / math.sqrt(n_x)
        B = rng.standard_normal((n_x, n_u))
        S = np.linalg.qr(rng.standard_normal((n_x, n_x)))[0] if k else np.eye(n_x)
        if k:
            A0[n_x - k:, : n_x - k] = 0.0
            A1[n_x - k:, : n_x - k] = 0.0
            B[n_x - k:] = 0.0
        base = build_system({"kind": "cosine", "params": {"constant": A0.tolist(), "cosine": A1.tolist()}},
                            B, period, samples_per_period)
        mono = monodromy(base).matrix
        boost = 0.0
        if k:
            # the hidden block evolves on its own, so a shift of its diagonal scales its multipliers exactly
            ell = np.sort(np.log(np.abs(np.linalg.eigvals(mono[: n_x - k, : n_x - k]))))[::-1]
            ell_h = np.log(np.abs(np.linalg.eigvals(mono[n_x - k:, n_x - k:])))
            r = unstable_target - k
        else:
            ell = np.sort(np.log(np.abs(np.linalg.eigvals(mono))))[::-1]
            r = unstable_target
        lo_unst = ell[r - 1] if r else np.inf
        hi_stab = ell[r] if r < ell.size else -np.inf
        if lo_unst - hi_stab < 2.0 * margin + 0.1:
            continue
        if math.isinf(lo_unst):
            shift = hi_stab + margin + 0.2
        elif math.isinf(hi_stab):
            shift = lo_unst - margin - 0.2
        else:
            shift = 0.5 * (lo_unst + hi_stab)
        top = ell[0] - shift if ell.size else -np.inf
        if k:
            boost = max(0.0, shift + margin + 0.2 - ell_h.min())
            top = max(top, ell_h.max() + boost - shift)
        if top * max(unstable_target, 1) > math.log(max_growth):
            continue
        if k:
            A0[n_x - k:, n_x - k:] += (boost / period) * np.eye(k)
        A0s = S @ (A0 - (shift / period) * np.eye(n_x)) @ S.T
        A1s = S @ A1 @ S.T
        system = build_system({"kind": "cosine", "params": {"constant": A0s.tolist(), "cosine": A1s.tolist()}},
                              S @ B, period, samples_per_period,
                              label=f"random n_x={n_x} n_u={n_u} seed={seed} unstable={unstable_target}"
                                    + (f" hidden={k}" if k else ""))
        sp = split(monodromy(system))
        mods = np.abs(sp.multipliers)
        if sp.n0 == unstable_target and not np.any((mods > 1 / 1.05) & (mods < 1.05)):
            return system
    raise ScenarioError(f"could not reach {unstable_target} unstable multipliers in {attempts} attempts")


def random_subspace(n_u: int, dim: int, rng: np.random.Generator) -> ControlSubspace:
    """Uniformly random ``dim``-dimensional subspace of R^{n_u}."""
    if dim == n_u:
        return ControlSubspace.full()
    if dim == 0:
        return ControlSubspace("basis", np.zeros((n_u, 0)))
    q = np.linalg.qr(rng.standard_normal((n_u, dim)))[0]
    return ControlSubspace("basis", q)


# ------------------------------------------------------------------- registry


def _stable_scalar():
    return build_system({"kind": "cosine", "params": {"constant": [[-1.0]], "cosine": [[0.5]]}}, [[1.0]], 1.0,
                        label="stable scalar")


def _unstable_scalar():
    return build_system([[1.0]], [[1.0]], 1.0, label="unstable scalar")


def _heat_interior():
    shift = float(laplacian_eigenvalues(2)) + 5.0
    return heat_1d(HeatSpec(size=5, period=0.1, static=-shift,
                            oscillating=lambda x: 20.0 * x * (1.0 - x), window=(0.2, 0.5),
                            samples_per_period=1024, label="heat interior control"))


def _heat_pstar():
    """Interior-control heat equation with controls restricted to the dual unstable space."""
    system = _heat_interior()
    sp = split(monodromy(system))
    basis = np.linalg.qr(sp.P.T @ sp.basis_H1)[0]
    return system.with_subspace(ControlSubspace("basis", basis)).with_label(
        system.label.replace("heat interior control", "heat control on dual unstable space"))


def _rotation_growth():
    # rotating-frame oscillator with growth, single input on the first state
    return build_system({"kind": "cosine", "params": {"constant": [[0.3, 1.0], [-1.0, 0.1]],
                                                        "cosine": [[0.0, 0.8], [0.8, 0.0]]}},
                        [[1.0], [0.0]], 2.0 * math.pi, label="rotation growth")


def _time_invariant():
    return build_system([[0.5, 1.0, 0.0], [0.0, -1.0, 1.0], [0.0, 0.0, 0.2]], [[0.0], [0.0], [1.0]], 1.0,
                        label="time invariant")


def _oscillator():
    return build_system({"kind": "cosine", "params": {"constant": [[0.2, 1.0], [-1.0, 0.1]],
                                                        "cosine": [[0.0, 0.5], [0.0, 0.0]]}},
                        [[0.0], [1.0]], 1.0, label="two-state periodic oscillator")


def _switching():
    return switching_scalar()[0]


SCENARIOS: dict[str, Callable[[], PeriodicSystem]] = {
    "switching": _switching,
    "stable-scalar": _stable_scalar,
    "unstable-scalar": _unstable_scalar,
    "oscillator": _oscillator,
    "rotation-growth": _rotation_growth,
    "time-invariant": _time_invariant,
    "heat-counterexample": lambda: counterexample_h1state(3, 0.1),
    "heat-interior": _heat_interior,
    "heat-pstar": _heat_pstar,
    "random-stable": lambda: random_periodic(4, 2, 11, 0),
    "random-unstable": lambda: random_periodic(6, 2, 12, 2),
    "random-hidden": lambda: random_periodic(5, 2, 13, 2, hidden_unstable=1),
}


def scenario(name: str) -> PeriodicSystem:
    try:
        builder = SCENARIOS[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}") from None
    return builder()


def write_scenarios(out_dir, names=None, *, seed: int | None = None) -> list[Path]:
    """Write scenario JSON files; with ``seed`` also a random system for that seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in names or list(SCENARIOS):
        p = out / f"{name}.json"
        save_scenario(scenario(name), p)
        paths.append(p)
    if seed is not None:
        p = out / f"random-seed-{seed}.json"
        save_scenario(random_periodic(6, 2, seed, 2), p)
        paths.append(p)
    return paths
