"""System model: time grids, periodic coefficient providers, control subspaces,
sampled controls and the scenario file schema.

The state equation is ``y'(t) = M(t) y(t) + D(t) u(t)`` with ``M`` and ``D``
T-periodic. Coefficients are providers sampled on demand. Every provider
accepts a ``side`` argument so that piecewise-continuous data can be evaluated
as a right limit (``side=+1``, the default) or a left limit (``side=-1``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._interp import PiecewiseLinear
from .errors import ScenarioError

DEFAULT_SAMPLES = 256
_ALIGN_TOL = 1e-9


# --------------------------------------------------------------------------- grid


@dataclass(frozen=True)
class TimeGrid:
    period: float
    samples_per_period: int

    def __post_init__(self):
        if not (math.isfinite(self.period) and self.period > 0):
            raise ScenarioError(f"period must be positive, got {self.period!r}")
        if int(self.samples_per_period) != self.samples_per_period or self.samples_per_period < 8:
            raise ScenarioError("samples_per_period must be an integer >= 8")
        object.__setattr__(self, "samples_per_period", int(self.samples_per_period))

    @property
    def step(self) -> float:
        return self.period / self.samples_per_period

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.samples_per_period + 1) * self.step

    def is_node(self, t: float, refine: int = 1) -> bool:
        x = t / (self.step / refine)
        return abs(x - round(x)) < _ALIGN_TOL * max(1.0, abs(x))


# ------------------------------------------------------------------ coefficients


def _wrap(times: np.ndarray, period: float, side: int) -> np.ndarray:
    """Reduce times to one period: [0, T) for right limits, (0, T] for left limits."""
    tau = np.mod(times, period)
    tol = 1e-12 * period
    if side >= 0:
        return np.where(tau > period - tol, 0.0, tau)
    return np.where(tau < tol, period, tau)


class Coefficient:
    """A T-periodic matrix-valued function of time."""

    period: float
    shape: tuple[int, int]

    def sample(self, times, side: int = 1) -> np.ndarray:
        """Values at ``times`` as an array of shape ``(len(times),) + shape``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return self._sample(_wrap(times, self.period, side), side)

    def __call__(self, t: float, side: int = 1) -> np.ndarray:
        return self.sample([t], side)[0]

    def breakpoints(self) -> np.ndarray:
        """Jump locations inside [0, T)."""
        return np.empty(0)

    def to_spec(self, grid: TimeGrid) -> dict:
        values = self.sample(grid.nodes)
        return {"kind": "samples", "samples": values.tolist()}

    def _sample(self, tau: np.ndarray, side: int) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


class ConstantCoefficient(Coefficient):
    def __init__(self, matrix, period: float):
        self.matrix = _finite_matrix(matrix, "constant coefficient")
        self.period = float(period)
        self.shape = self.matrix.shape

    def _sample(self, tau, side):
        return np.repeat(self.matrix[None], tau.size, axis=0)

    def to_spec(self, grid):
        return {"kind": "constant", "params": {"matrix": self.matrix.tolist()}}


class CosineCoefficient(Coefficient):
    """``C0 + C1 cos(2 pi k t / T) + C2 sin(2 pi k t / T)``."""

    def __init__(self, constant, cosine, period: float, sine=None, harmonic: int = 1):
        self.constant = _finite_matrix(constant, "cosine coefficient")
        self.cosine = _finite_matrix(cosine, "cosine coefficient")
        self.sine = np.zeros_like(self.constant) if sine is None else _finite_matrix(sine, "cosine coefficient")
        if not (self.constant.shape == self.cosine.shape == self.sine.shape):
            raise ScenarioError("cosine coefficient blocks differ in shape")
        if int(harmonic) != harmonic or harmonic < 1:
            raise ScenarioError("harmonic must be a positive integer")
        self.harmonic = int(harmonic)
        self.period = float(period)
        self.shape = self.constant.shape

    def _sample(self, tau, side):
        w = 2.0 * np.pi * self.harmonic * tau / self.period
        c = np.cos(w)[:, None, None]
        s = np.sin(w)[:, None, None]
        return self.constant[None] + c * self.cosine[None] + s * self.sine[None]

    def to_spec(self, grid):
        params = {"constant": self.constant.tolist(), "cosine": self.cosine.tolist()}
        if np.any(self.sine):
            params["sine"] = self.sine.tolist()
        if self.harmonic != 1:
            params["harmonic"] = self.harmonic
        return {"kind": "cosine", "params": params}


class TabulatedCoefficient(Coefficient):
    """Piecewise-linear data on [0, T]; repeated nodes encode jumps.

    Built either from switching data (piecewise constant) or from dense
    uniform samples.
    """

    def __init__(self, nodes, values, period: float, *, kind: str = "samples", breaks=None, matrices=None):
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ScenarioError("non-finite coefficient")
        self.period = float(period)
        self.shape = values.shape[1:]
        self.kind = kind
        self._interp = PiecewiseLinear(nodes, values)
        self._breaks = np.asarray(breaks if breaks is not None else [], dtype=float)
        self._matrices = matrices

    @classmethod
    def switching(cls, breakpoints, matrices, period: float):
        b = np.asarray(breakpoints, dtype=float)
        mats = np.asarray(matrices, dtype=float)
        if mats.ndim != 3 or b.ndim != 1 or b.size != mats.shape[0]:
            raise ScenarioError("switching coefficient needs one matrix per breakpoint")
        if b.size == 0 or b[0] != 0.0:
            raise ScenarioError("switching breakpoints must start at 0")
        if np.any(np.diff(b) <= 0) or b[-1] >= period:
            raise ScenarioError("switching breakpoints must increase strictly inside [0, T)")
        ends = np.append(b[1:], period)
        nodes = np.column_stack([b, ends]).ravel()
        values = np.repeat(mats, 2, axis=0)
        return cls(nodes, values, period, kind="switching", breaks=b[1:], matrices=mats)

    @classmethod
    def uniform(cls, samples, period: float):
        vals = np.asarray(samples, dtype=float)
        if vals.ndim != 3 or vals.shape[0] < 2:
            raise ScenarioError("samples must be a list of at least two matrices")
        if not np.all(np.isfinite(vals)):
            raise ScenarioError("non-finite coefficient")
        scale = max(1.0, float(np.max(np.abs(vals))))
        if np.max(np.abs(vals[0] - vals[-1])) > 1e-12 * scale:
            raise ScenarioError("coefficient samples are not periodic: first and last sample differ")
        nodes = np.linspace(0.0, period, vals.shape[0])
        return cls(nodes, vals, period, kind="samples")

    def breakpoints(self):
        return self._breaks

    def _sample(self, tau, side):
        return self._interp(tau, side)

    def to_spec(self, grid):
        if self.kind == "switching":
            b = np.concatenate([[0.0], self._breaks])
            return {"kind": "switching", "params": {"breakpoints": b.tolist(), "matrices": self._matrices.tolist()}}
        x = self._interp.nodes
        if np.allclose(np.diff(x), x[-1] / (x.size - 1), rtol=0, atol=1e-12 * self.period):
            return {"kind": "samples", "samples": self._interp.values.tolist()}
        return super().to_spec(grid)


class FunctionCoefficient(Coefficient):
    """Wraps a Python callable ``t -> matrix``; assumed continuous."""

    def __init__(self, func: Callable[[float], np.ndarray], period: float):
        self.func = func
        self.period = float(period)
        first = np.atleast_2d(np.asarray(func(0.0), dtype=float))
        self.shape = first.shape

    def _sample(self, tau, side):
        out = np.empty((tau.size,) + self.shape)
        for i, t in enumerate(tau):
            out[i] = np.asarray(self.func(float(t)), dtype=float).reshape(self.shape)
        return out


class ProjectedCoefficient(Coefficient):
    """``t -> D(t) @ Pi`` for a fixed right factor ``Pi``."""

    def __init__(self, base: Coefficient, right: np.ndarray):
        self.base = base
        self.right = np.asarray(right, dtype=float)
        self.period = base.period
        self.shape = (base.shape[0], self.right.shape[1])

    def sample(self, times, side=1):
        return self.base.sample(times, side) @ self.right

    def breakpoints(self):
        return self.base.breakpoints()


def _finite_matrix(m, what: str) -> np.ndarray:
    try:
        arr = np.atleast_2d(np.asarray(m, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{what}: not a numeric matrix") from exc
    if arr.ndim != 2:
        raise ScenarioError(f"{what}: expected a 2-d matrix")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError("non-finite coefficient")
    return arr


# ------------------------------------------------------------- control subspace


@dataclass(frozen=True)
class ControlSubspace:
    """Either the whole control space or the span of orthonormal columns."""

    kind: str = "full"
    basis: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("full", "basis"):
            raise ScenarioError(f"unknown control_subspace kind {self.kind!r}")
        if self.kind == "basis":
            if self.basis is None:
                raise ScenarioError("control_subspace of kind 'basis' needs a basis")
            b = np.array(self.basis, dtype=float)
            if b.ndim != 2 or not np.all(np.isfinite(b)):
                raise ScenarioError("control basis must be a finite 2-d matrix")
            if b.shape[1] > b.shape[0]:
                raise ScenarioError("control basis has more columns than the control dimension")
            if b.shape[1] and np.max(np.abs(b.T @ b - np.eye(b.shape[1]))) > 1e-10:
                raise ScenarioError("control basis columns are not orthonormal")
            b.setflags(write=False)
            object.__setattr__(self, "basis", b)

    @classmethod
    def full(cls) -> "ControlSubspace":
        return cls("full")

    @classmethod
    def spanned_by(cls, vectors) -> "ControlSubspace":
        """Orthonormalize arbitrary spanning columns (rank-revealing SVD)."""
        v = np.atleast_2d(np.asarray(vectors, dtype=float))
        if v.shape[1] == 0:
            return cls("basis", np.zeros((v.shape[0], 0)))
        u, s, _ = np.linalg.svd(v, full_matrices=False)
        r = int(np.sum(s > 1e-12 * max(s[0], 1e-300))) if s.size else 0
        return cls("basis", u[:, :r])

    def matrix(self, n_u: int) -> np.ndarray:
        """Basis as an ``n_u x m0`` matrix (identity for the full space)."""
        if self.kind == "full":
            return np.eye(n_u)
        if self.basis.shape[0] != n_u:
            raise ScenarioError(f"control basis has {self.basis.shape[0]} rows but n_u = {n_u}")
        return np.array(self.basis)

    def dim(self, n_u: int) -> int:
        return self.matrix(n_u).shape[1]

    def projector(self, n_u: int) -> np.ndarray:
        b = self.matrix(n_u)
        return b @ b.T

    def to_spec(self) -> dict:
        if self.kind == "full":
            return {"kind": "full"}
        return {"kind": "basis", "basis": self.basis.tolist()}


# ------------------------------------------------------------------- the system


@dataclass(frozen=True, eq=False)
class PeriodicSystem:
    drift: Coefficient
    input: Coefficient
    grid: TimeGrid
    label: str = ""
    control_subspace: ControlSubspace = field(default_factory=ControlSubspace.full)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_x(self) -> int:
        return self.drift.shape[0]

    @property
    def n_u(self) -> int:
        return self.input.shape[1]

    @property
    def period(self) -> float:
        return self.grid.period

    def with_grid(self, samples_per_period: int) -> "PeriodicSystem":
        return build_system(self.drift, self.input, self.period, samples_per_period,
                            label=self.label, control_subspace=self.control_subspace)

    def with_subspace(self, Z: ControlSubspace) -> "PeriodicSystem":
        Z.matrix(self.n_u)
        return PeriodicSystem(self.drift, self.input, self.grid, self.label, Z)

    def with_label(self, label: str) -> "PeriodicSystem":
        return PeriodicSystem(self.drift, self.input, self.grid, label, self.control_subspace)


def _as_coefficient(spec, period: float, what: str) -> Coefficient:
    if isinstance(spec, Coefficient):
        if abs(spec.period - period) > 1e-12 * period:
            raise ScenarioError(f"{what} has period {spec.period}, system period is {period}")
        return spec
    if isinstance(spec, dict):
        return coefficient_from_spec(spec, period, what)
    if callable(spec):
        return FunctionCoefficient(spec, period)
    return ConstantCoefficient(spec, period)


def build_system(drift_spec, input_spec, T: float, samples_per_period: int = DEFAULT_SAMPLES, *,
                 label: str = "", control_subspace: ControlSubspace | None = None) -> PeriodicSystem:
    """Validate coefficient data and assemble a :class:`PeriodicSystem`.

    ``drift_spec`` and ``input_spec`` may be :class:`Coefficient` objects,
    scenario-style dicts, constant arrays or callables of time.
    """
    try:
        T = float(T)
    except (TypeError, ValueError) as exc:
        raise ScenarioError("period must be a number") from exc
    grid = TimeGrid(T, samples_per_period)
    drift = _as_coefficient(drift_spec, T, "drift")
    inp = _as_coefficient(input_spec, T, "input")
    if len(drift.shape) != 2 or drift.shape[0] != drift.shape[1]:
        raise ScenarioError(f"drift must be square, got shape {drift.shape}")
    if len(inp.shape) != 2 or inp.shape[0] != drift.shape[0]:
        raise ScenarioError(f"input has shape {inp.shape}, expected ({drift.shape[0]}, n_u)")
    for name, c in (("drift", drift), ("input", inp)):
        for b in c.breakpoints():
            if not grid.is_node(b):
                raise ScenarioError(f"{name} jump at t={b} does not fall on a grid node")
        nodes = grid.nodes
        for side in (1, -1):
            if not np.all(np.isfinite(c.sample(nodes, side))):
                raise ScenarioError("non-finite coefficient")
        if isinstance(c, FunctionCoefficient):
            a = np.asarray(c.func(0.0), dtype=float)
            b = np.asarray(c.func(T), dtype=float)
            if np.max(np.abs(a - b)) > 1e-12 * max(1.0, float(np.max(np.abs(a)))):
                raise ScenarioError(f"{name} is not T-periodic: values at 0 and T differ")
    Z = control_subspace or ControlSubspace.full()
    Z.matrix(inp.shape[1])
    return PeriodicSystem(drift, inp, grid, label, Z)


def project_control(system: PeriodicSystem, Z: ControlSubspace | None = None) -> Coefficient:
    """The map ``t -> D(t) Pi_Z`` as a periodic coefficient."""
    Z = system.control_subspace if Z is None else Z
    return ProjectedCoefficient(system.input, Z.projector(system.n_u))


# ----------------------------------------------------------------- sampled control


class SampledControl:
    """Control samples ``u(t_i)`` in U coordinates, interpolated piecewise linearly.

    Repeated nodes are allowed and mark jumps.
    """

    def __init__(self, nodes, values, Z: ControlSubspace | None = None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if not np.all(np.isfinite(values)):
            raise ScenarioError("non-finite control sample")
        self._interp = PiecewiseLinear(nodes, values)
        self.nodes = self._interp.nodes
        self.values = values
        if Z is not None and Z.kind == "basis":
            b = Z.matrix(values.shape[1])
            resid = values - values @ b @ b.T
            scale = max(1.0, float(np.max(np.abs(values))))
            if np.max(np.abs(resid), initial=0.0) > 1e-10 * scale:
                raise ScenarioError("control values leave the control subspace")

    @property
    def n_u(self) -> int:
        return self.values.shape[1]

    def covers(self, s: float, t: float) -> bool:
        a, b = self._interp.span
        tol = 1e-12 * max(1.0, abs(b))
        return a <= s + tol and b >= t - tol

    def __call__(self, t, side: int = 1) -> np.ndarray:
        return self._interp(t, side)

    @classmethod
    def zero(cls, n_u: int, t_end: float) -> "SampledControl":
        return cls([0.0, max(t_end, 1e-300)], np.zeros((2, n_u)))


# ------------------------------------------------------------------ scenario I/O

_TOP_KEYS = ("label", "n_x", "n_u", "period", "drift", "input", "control_subspace", "grid")
_REQUIRED = ("n_x", "n_u", "period", "drift", "input")
_COEF_PARAMS = {
    "constant": ("matrix",),
    "cosine": ("constant", "cosine", "sine", "harmonic"),
    "switching": ("breakpoints", "matrices"),
}


def _check_keys(d: dict, allowed, where: str):
    if not isinstance(d, dict):
        raise ScenarioError(f"{where} must be a JSON object")
    for k in d:
        if k not in allowed:
            raise ScenarioError(f"unknown key {k!r} in {where}")


def coefficient_from_spec(spec: dict, period: float, where: str = "coefficient") -> Coefficient:
    _check_keys(spec, ("kind", "params", "samples"), where)
    kind = spec.get("kind")
    if kind is None:
        raise ScenarioError(f"missing key 'kind' in {where}")
    if kind == "samples":
        if "samples" not in spec:
            raise ScenarioError(f"missing key 'samples' in {where}")
        if "params" in spec:
            raise ScenarioError(f"unknown key 'params' in {where} of kind 'samples'")
        return TabulatedCoefficient.uniform(spec["samples"], period)
    if kind not in _COEF_PARAMS:
        raise ScenarioError(f"unknown kind {kind!r} in {where}")
    if "samples" in spec:
        raise ScenarioError(f"unknown key 'samples' in {where} of kind {kind!r}")
    params = spec.get("params")
    if params is None:
        raise ScenarioError(f"missing key 'params' in {where}")
    _check_keys(params, _COEF_PARAMS[kind], f"{where}.params")
    try:
        if kind == "constant":
            return ConstantCoefficient(params["matrix"], period)
        if kind == "cosine":
            return CosineCoefficient(params["constant"], params["cosine"], period,
                                     sine=params.get("sine"), harmonic=params.get("harmonic", 1))
        return TabulatedCoefficient.switching(params["breakpoints"], params["matrices"], period)
    except KeyError as exc:
        raise ScenarioError(f"missing key {exc.args[0]!r} in {where}.params") from None


def system_from_dict(d: dict, samples_per_period: int | None = None) -> PeriodicSystem:
    _check_keys(d, _TOP_KEYS, "scenario")
    for k in _REQUIRED:
        if k not in d:
            raise ScenarioError(f"missing key {k!r} in scenario")
    period = d["period"]
    if not isinstance(period, (int, float)) or isinstance(period, bool):
        raise ScenarioError("key 'period' must be a number")
    if not period > 0:
        raise ScenarioError("key 'period' must be positive")
    grid = d.get("grid", {})
    _check_keys(grid, ("samples_per_period",), "grid")
    sp = samples_per_period or grid.get("samples_per_period", DEFAULT_SAMPLES)
    cs = d.get("control_subspace", {"kind": "full"})
    _check_keys(cs, ("kind", "basis"), "control_subspace")
    if "kind" not in cs:
        raise ScenarioError("missing key 'kind' in control_subspace")
    Z = ControlSubspace(cs["kind"], None if cs.get("basis") is None else np.asarray(cs["basis"], dtype=float))
    label = d.get("label", "")
    if not isinstance(label, str):
        raise ScenarioError("key 'label' must be a string")
    system = build_system(coefficient_from_spec(d["drift"], period, "drift"),
                          coefficient_from_spec(d["input"], period, "input"),
                          period, sp, label=label, control_subspace=Z)
    if system.n_x != d["n_x"]:
        raise ScenarioError(f"key 'n_x' = {d['n_x']} but drift is {system.n_x}x{system.n_x}")
    if system.n_u != d["n_u"]:
        raise ScenarioError(f"key 'n_u' = {d['n_u']} but input has {system.n_u} columns")
    return system


def system_to_dict(system: PeriodicSystem) -> dict:
    return {
        "label": system.label,
        "n_x": system.n_x,
        "n_u": system.n_u,
        "period": system.period,
        "drift": system.drift.to_spec(system.grid),
        "input": system.input.to_spec(system.grid),
        "control_subspace": system.control_subspace.to_spec(),
        "grid": {"samples_per_period": system.grid.samples_per_period},
    }


def load_scenario(path, samples_per_period: int | None = None) -> PeriodicSystem:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from exc
    return system_from_dict(data, samples_per_period)


def save_scenario(system: PeriodicSystem, path) -> None:
    from ._jsonout import dump

    dump(system_to_dict(system), path)
