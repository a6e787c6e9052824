"""Attainable-subspace Gramians and the three stabilizability certificates.

(b) the unstable projection of the states reachable in n0 periods is all of H1;
(c) no nonzero dual unstable state is invisible to the controls over n0 periods;
(d) no eigenvector of the transposed monodromy for an unstable multiplier is
    invisible to the controls over one period.

The three are equivalent in exact arithmetic; the test suite treats any
disagreement as a failure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from .errors import ScenarioError
from .propagator import periodic_stages, step_maps
from .spectral import SpectralSplit
from .system import ControlSubspace, PeriodicSystem

RANK_TOL = 1e-9
GROWTH_LIMIT = 1e8


@dataclass(frozen=True, eq=False)
class Gramian:
    matrix: np.ndarray
    horizon_periods: int
    subspace: ControlSubspace
    quadrature_steps: int


class Check(NamedTuple):
    verdict: bool
    margin: float
    relative_margin: float
    undecidable: bool


@dataclass(frozen=True, eq=False)
class StabilizabilityCertificate:
    verdict_b: bool
    verdict_c: bool
    verdict_d: bool
    margin_b: float
    margin_c: float
    margin_d: float
    relative_margins: tuple[float, float, float]
    rank_tolerance: float
    n0: int
    delta_bar: float
    borderline_flags: tuple[bool, ...]
    undecidable: bool
    growth_factor: float
    label: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def agreement(self) -> bool:
        return self.verdict_b == self.verdict_c == self.verdict_d

    @property
    def stabilizable(self) -> bool:
        return self.agreement and self.verdict_b and not self.undecidable

    @property
    def unsupported(self) -> bool:
        return self.growth_factor > GROWTH_LIMIT

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "verdict_b": self.verdict_b,
            "verdict_c": self.verdict_c,
            "verdict_d": self.verdict_d,
            "margins": {"b": self.margin_b, "c": self.margin_c, "d": self.margin_d},
            "relative_margins": {"b": self.relative_margins[0], "c": self.relative_margins[1],
                                 "d": self.relative_margins[2]},
            "n0": self.n0,
            "delta_bar": self.delta_bar,
            "borderline_flags": list(self.borderline_flags),
            "rank_tolerance": self.rank_tolerance,
            "agreement": self.agreement,
            "undecidable": self.undecidable,
            "growth_factor": self.growth_factor,
            "unsupported_growth": self.unsupported,
        }


# ------------------------------------------------------------------- Gramians


def _input_weight(system: PeriodicSystem, Z: ControlSubspace, D: np.ndarray) -> np.ndarray:
    """Stage values of ``D Pi_Z D^T`` from input stages ``D`` of shape (n, 3, n_x, n_u)."""
    DZ = D @ Z.matrix(system.n_u)
    return DZ @ np.swapaxes(DZ, -1, -2)


def lyapunov_increments(Ms: np.ndarray, Ss: np.ndarray, h: float) -> np.ndarray:
    """One RK4 step of ``G' = M G + G M^T + S`` from ``G = 0``, batched over steps."""
    m, b = Ms[:, 1], Ms[:, 2]
    sa, sm, sb = Ss[:, 0], Ss[:, 1], Ss[:, 2]
    mt, bt = np.swapaxes(m, -1, -2), np.swapaxes(b, -1, -2)
    k1 = sa
    G2 = 0.5 * h * k1
    k2 = m @ G2 + G2 @ mt + sm
    G3 = 0.5 * h * k2
    k3 = m @ G3 + G3 @ mt + sm
    G4 = h * k3
    k4 = b @ G4 + G4 @ bt + sb
    return (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _zkey(Z: ControlSubspace):
    return (Z.kind, None if Z.basis is None else (Z.basis.shape, Z.basis.tobytes()))


def gramian(system: PeriodicSystem, Z: ControlSubspace | None = None, k: int = 1) -> Gramian:
    """Reachability Gramian ``G_k`` of ``k`` periods started at 0 with controls in ``Z``.

    Co-integrated on the propagator grid: ``G <- R_i G R_i^T + c_i`` where
    ``R_i`` is the propagator's RK4 step map and ``c_i`` one RK4 step of the
    Lyapunov equation from zero. Fourth order, and consistent with the
    monodromy so that ``G_k = P G_{k-1} P^T + G_1`` holds for the discrete
    system up to rounding.
    """
    Z = system.control_subspace if Z is None else Z
    if k < 1:
        raise ScenarioError("Gramian horizon must be at least one period")
    key = ("gramian", _zkey(Z), k)
    if key in system._cache:
        return system._cache[key]
    plan, R = step_maps(system, 0.0, k * system.period)
    ckey = ("lyap-inc", _zkey(Z))
    if ckey not in system._cache:
        S = _input_weight(system, Z, periodic_stages(system, "D"))
        system._cache[ckey] = lyapunov_increments(periodic_stages(system, "M"), S, plan.h)
    C = system._cache[ckey][plan.indices()]
    G = np.zeros((system.n_x, system.n_x))
    for Ri, ci in zip(R, C):
        G = Ri @ G @ Ri.T + ci
    G = 0.5 * (G + G.T)
    out = Gramian(G, k, Z, plan.nsteps)
    system._cache[key] = out
    return out


def attainable_basis(G, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the numerical range: singular vectors with sigma > tol * sigma_max."""
    G = np.asarray(G.matrix if isinstance(G, Gramian) else G, dtype=float)
    U, s, _ = np.linalg.svd(G)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((G.shape[0], 0))
    return U[:, s > tol * s[0]]


def gramian_factor(G, tol: float = RANK_TOL) -> np.ndarray:
    """Square-root factor ``U sqrt(S)`` restricted to the numerical range of ``G``."""
    G = np.asarray(G.matrix if isinstance(G, Gramian) else G, dtype=float)
    U, s, _ = np.linalg.svd(G)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((G.shape[0], 0))
    keep = s > tol * s[0]
    return U[:, keep] * np.sqrt(s[keep])


def max_angle(A: np.ndarray, B: np.ndarray) -> float:
    """Largest principal angle; pi/2 when dimensions differ."""
    if A.shape[1] != B.shape[1]:
        return float(np.pi / 2)
    if A.shape[1] == 0:
        return 0.0
    return float(np.max(sla.subspace_angles(A, B)))


def krylov_factor(system: PeriodicSystem, Z: ControlSubspace | None, sp: SpectralSplit, k: int,
                  tol: float = RANK_TOL) -> np.ndarray:
    """``[F, P F, ..., P^{k-1} F]`` with ``F`` the square-root factor of ``G_1``."""
    F = gramian_factor(gramian(system, Z, 1), tol)
    blocks = [F]
    for _ in range(k - 1):
        blocks.append(sp.monodromy @ blocks[-1])
    return np.hstack(blocks)


def recursion_check(system: PeriodicSystem, Z: ControlSubspace | None, sp: SpectralSplit, k: int,
                    tol: float = RANK_TOL) -> float:
    """Largest principal angle between range(G_k) and the one-period recursion.

    The recursion side is the range of the Krylov-type block built from the
    square-root factor of G_1, cut at ``sqrt(tol)`` so that both sides use the
    same numerical-rank threshold on the Gramian scale.
    """
    if k < 1:
        raise ScenarioError("k must be at least 1")
    direct = attainable_basis(gramian(system, Z, k), tol)
    if k == 1:
        return 0.0
    K = krylov_factor(system, Z, sp, k, tol)
    U, s, _ = np.linalg.svd(K, full_matrices=False)
    rec = U[:, s > np.sqrt(tol) * s[0]] if s.size and s[0] > 0 else np.zeros((system.n_x, 0))
    return max_angle(direct, rec)


def projected_range(system: PeriodicSystem, Z: ControlSubspace | None, sp: SpectralSplit, k: int,
                    tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of ``P range(G_k)``.

    The rank is read off the balanced matrix ``A^{-k} Ghat_k A^{-k T}`` (``A``
    the monodromy on H1, ``Ghat_k`` the projected Gramian in H1 coordinates),
    which stays bounded as ``k`` grows; a cut relative to ``|Ghat_k|`` would
    drop slowly growing directions once the growth rates differ by more than
    ``1/tol`` over ``k`` periods.
    """
    if sp.n0 == 0:
        return np.zeros((system.n_x, 0))
    U1 = sp.basis_H1
    G = gramian(system, Z, k).matrix
    Ghat = U1.T @ sp.P @ G @ sp.P.T @ U1
    Ak = np.linalg.matrix_power(U1.T @ sp.monodromy @ U1, k)
    W = np.linalg.solve(Ak, np.linalg.solve(Ak, Ghat).T)
    B = attainable_basis(0.5 * (W + W.T), tol)
    if B.shape[1] == 0:
        return np.zeros((system.n_x, 0))
    return np.linalg.qr(U1 @ (Ak @ B))[0]


# ---------------------------------------------------------------- certificates


def _decide(value: float, scale: float, tol: float) -> Check:
    rel = value / scale if scale > 0 else 0.0
    rel = max(rel, 0.0)
    return Check(bool(rel > tol), max(float(value), 0.0), float(rel), bool(tol / 10 < rel < 10 * tol))


def _growth(sp: SpectralSplit) -> float:
    lam = np.abs(sp.multipliers[sp.unstable])
    return float(lam.max() ** sp.n0) if lam.size else 1.0


def certify_b(system: PeriodicSystem, Z: ControlSubspace | None, sp: SpectralSplit,
              tol: float = RANK_TOL) -> Check:
    """``Ghat = U1^T P G_{n0} P^T U1`` must be nonsingular; margin is its smallest singular value.

    The relative margin divides by ``|P|^2 |G_{n0}|``, an upper bound for ``|Ghat|``.
    """
    if sp.n0 == 0:
        return Check(True, float("inf"), float("inf"), False)
    U1 = sp.basis_H1
    G = gramian(system, Z, sp.n0).matrix
    Ghat = U1.T @ sp.P @ G @ sp.P.T @ U1
    s = np.linalg.svd(Ghat, compute_uv=False)
    return _decide(float(s[-1]), float(np.linalg.norm(sp.P, 2) ** 2 * np.linalg.norm(G, 2)), tol)


def dual_basis(sp: SpectralSplit) -> np.ndarray:
    """Orthonormal basis of range(P^T)."""
    if sp.n0 == 0:
        return np.zeros((sp.n_x, 0))
    U = np.linalg.svd(sp.P.T)[0]
    return U[:, : sp.n0]


def certify_c(system: PeriodicSystem, Z: ControlSubspace | None, sp: SpectralSplit,
              tol: float = RANK_TOL) -> Check:
    if sp.n0 == 0:
        return Check(True, float("inf"), float("inf"), False)
    Ut = dual_basis(sp)
    G = gramian(system, Z, sp.n0).matrix
    lam = float(np.linalg.eigvalsh(Ut.T @ G @ Ut)[0])
    return _decide(lam, float(np.linalg.norm(G, 2)), tol)


def eigenspace(A: np.ndarray, mu: complex, multiplicity: int) -> np.ndarray:
    """Numerical kernel of ``mu I - A`` (complex), via SVD.

    The dimension is taken from the gap in the trailing singular values,
    bounded by the algebraic multiplicity of the cluster.
    """
    n = A.shape[0]
    M = mu * np.eye(n) - A
    _, s, Vh = np.linalg.svd(M)
    scale = max(float(s[0]), 1.0)
    tail = s[n - multiplicity:]
    # geometric multiplicity: singular values at rounding level for the cluster
    cut = np.sqrt(np.finfo(float).eps) * scale * 1e-2
    dim = int(np.sum(tail <= cut))
    if dim == 0:
        dim = 1
    return Vh[n - dim:].conj().T


def certify_d(system: PeriodicSystem, Z: ControlSubspace | None, sp: SpectralSplit,
              tol: float = RANK_TOL) -> Check:
    if sp.n0 == 0:
        return Check(True, float("inf"), float("inf"), False)
    G1 = gramian(system, Z, 1).matrix
    scale = float(np.linalg.norm(G1, 2))
    At = sp.monodromy.T
    worst = None
    unstable = sp.multipliers[sp.unstable]
    mult = sp.multiplicity[sp.unstable]
    for mu in sp.unstable_values():
        m = int(mult[np.argmin(np.abs(unstable - mu))])
        V = eigenspace(At, mu, m)
        W = V.conj().T @ G1 @ V
        lam = float(np.linalg.eigvalsh(0.5 * (W + W.conj().T))[0])
        chk = _decide(lam, scale, tol)
        if worst is None or chk.relative_margin < worst.relative_margin:
            worst = chk
    return worst


def certify(system: PeriodicSystem, sp: SpectralSplit, Z: ControlSubspace | None = None,
            tol: float = RANK_TOL) -> StabilizabilityCertificate:
    Z = system.control_subspace if Z is None else Z
    b = certify_b(system, Z, sp, tol)
    c = certify_c(system, Z, sp, tol)
    d = certify_d(system, Z, sp, tol)
    return StabilizabilityCertificate(
        verdict_b=b.verdict, verdict_c=c.verdict, verdict_d=d.verdict,
        margin_b=b.margin, margin_c=c.margin, margin_d=d.margin,
        relative_margins=(b.relative_margin, c.relative_margin, d.relative_margin),
        rank_tolerance=tol, n0=sp.n0, delta_bar=sp.delta_bar,
        borderline_flags=tuple(bool(x) for x in sp.borderline),
        undecidable=b.undecidable or c.undecidable or d.undecidable,
        growth_factor=_growth(sp), label=system.label,
    )


# ------------------------------------------------------------- finite reduction


def reduction_controls(system: PeriodicSystem, Z: ControlSubspace | None, sp: SpectralSplit) -> np.ndarray:
    """Node values (in U coordinates) of the minimum-norm controls that hit a basis of P range(G_{n0}).

    Returns an array of shape (nodes, n_u, n0).
    """
    from .propagator import adjoint_propagate

    Z = system.control_subspace if Z is None else Z
    n0 = sp.n0
    U1 = sp.basis_H1
    G = gramian(system, Z, n0).matrix
    Ghat = U1.T @ sp.P @ G @ sp.P.T @ U1
    W = np.linalg.solve(Ghat, np.eye(n0))  # coefficients hitting each basis vector of H1
    psi = adjoint_propagate(system, n0 * system.period, sp.P.T @ U1 @ W)
    Pi = Z.projector(system.n_u)
    times = psi.times
    D_right = system.input.sample(times, 1)
    D_left = system.input.sample(times, -1)
    vals = [Pi @ np.swapaxes(D_right, 1, 2) @ psi.states, Pi @ np.swapaxes(D_left, 1, 2) @ psi.states]
    return np.concatenate(vals, axis=0)


def finite_reduction(system: PeriodicSystem, Z: ControlSubspace | None, sp: SpectralSplit,
                     tol: float = RANK_TOL) -> tuple[ControlSubspace, StabilizabilityCertificate]:
    """Smallest SVD-truncated subspace of the minimum-norm control values that keeps (b) true."""
    Z = system.control_subspace if Z is None else Z
    if not certify_b(system, Z, sp, tol).verdict:
        raise ScenarioError("certificate (b) is false: nothing to reduce")
    if sp.n0 == 0:
        Zhat = ControlSubspace("basis", np.zeros((system.n_u, 0)))
        return Zhat, certify(system, sp, Zhat, tol)
    vals = reduction_controls(system, Z, sp)
    stacked = np.concatenate(list(np.moveaxis(vals, 2, 0)), axis=0)  # rows = node samples
    _, s, Vh = np.linalg.svd(stacked, full_matrices=False)
    rank = int(np.sum(s > 1e-12 * s[0])) if s.size and s[0] > 0 else 0
    cap = min(rank, sp.n0 * system.n_u)
    for m in range(1, cap + 1):
        Zhat = ControlSubspace("basis", Vh[:m].T)
        cert = certify(system, sp, Zhat, tol)
        if cert.verdict_b and not cert.undecidable:
            return Zhat, cert
    Zhat = ControlSubspace("basis", Vh[:cap].T)
    return Zhat, certify(system, sp, Zhat, tol)
