"""Floquet splitting into unstable (H1) and stable (H2) subspaces.

The projector onto H1 along H2 is computed twice, independently: from an
ordered real Schur form plus a Sylvester solve, and as the complement of a
Riesz contour integral of the resolvent.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ._jsonout import fmt
from .errors import NumericalError, ScenarioError
from .propagator import Monodromy, transition
from .system import PeriodicSystem

BORDERLINE_BAND = 1e-6
CLUSTER_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class SpectralSplit:
    multipliers: np.ndarray  # complex, modulus descending
    unstable: np.ndarray  # bool per multiplier
    multiplicity: np.ndarray  # algebraic multiplicity of each multiplier's cluster
    borderline: np.ndarray  # bool per multiplier, ||lambda| - 1| < 1e-6
    n: int
    n0: int
    delta_bar: float
    P: np.ndarray
    basis_H1: np.ndarray
    basis_H2: np.ndarray
    threshold: float
    monodromy: np.ndarray

    @property
    def n_x(self) -> int:
        return self.P.shape[0]

    @property
    def has_borderline(self) -> bool:
        return bool(np.any(self.borderline))

    @property
    def borderline_stable(self) -> bool:
        """A multiplier within the borderline band was classified stable."""
        return bool(np.any(self.borderline & ~self.unstable))

    def unstable_values(self) -> list[complex]:
        """One representative per distinct unstable multiplier (cluster mean)."""
        return [complex(np.mean(c)) for c in _clusters(self.multipliers[self.unstable])]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n0": self.n0,
            "delta_bar": self.delta_bar,
            "threshold": self.threshold,
            "borderline": bool(self.has_borderline),
            "borderline_flags": [bool(b) for b in self.borderline],
            "multipliers_re": [float(z.real) for z in self.multipliers],
            "multipliers_im": [float(z.imag) for z in self.multipliers],
        }


def _sorted(eigs: np.ndarray) -> np.ndarray:
    order = np.lexsort((-eigs.imag, -eigs.real, -np.round(np.abs(eigs), 12)))
    return eigs[order]


def _clusters(values: np.ndarray) -> list[np.ndarray]:
    """Single-linkage clusters of eigenvalues closer than CLUSTER_TOL (relative)."""
    values = list(values)
    groups: list[list[complex]] = []
    for z in values:
        hit = [g for g in groups if any(abs(z - w) <= CLUSTER_TOL * max(1.0, abs(w)) for w in g)]
        merged = [z]
        for g in hit:
            merged.extend(g)
            groups.remove(g)
        groups.append(merged)
    return [np.array(g) for g in groups]


def split(monodromy, unit_margin: float = 0.0) -> SpectralSplit:
    """Classify multipliers and build the unstable projector from an ordered Schur form.

    A multiplier is unstable when ``|lambda| >= 1 - unit_margin``.
    """
    A = np.asarray(monodromy.matrix if isinstance(monodromy, Monodromy) else monodromy, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ScenarioError("monodromy must be square")
    if not np.all(np.isfinite(A)):
        raise NumericalError("monodromy has non-finite entries")
    if unit_margin < 0:
        raise ScenarioError("unit_margin must be non-negative")
    n_x = A.shape[0]
    thr = 1.0 - unit_margin
    eigs = _sorted(np.linalg.eigvals(A).astype(complex))
    unstable = np.abs(eigs) >= thr
    n0 = int(unstable.sum())

    T, Q, sdim = sla.schur(A, output="real", sort=lambda re, im: re * re + im * im >= thr * thr)
    if sdim != n0:
        raise NumericalError(f"Schur reordering placed {sdim} multipliers in the unstable block, expected {n0}")
    k = n0
    if k == 0:
        P = np.zeros((n_x, n_x))
    elif k == n_x:
        P = np.eye(n_x)
    else:
        Y = sla.solve_sylvester(T[:k, :k], -T[k:, k:], T[:k, k:])
        Phat = np.zeros((n_x, n_x))
        Phat[:k, :k] = np.eye(k)
        Phat[:k, k:] = Y
        P = Q @ Phat @ Q.T
    H1 = Q[:, :k].copy()
    if k < n_x:
        comp = np.vstack([-Y, np.eye(n_x - k)]) if k else np.eye(n_x)
        H2 = np.linalg.qr(Q @ comp)[0]
    else:
        H2 = np.zeros((n_x, 0))

    multiplicity = np.zeros(n_x, dtype=int)
    clusters = _clusters(eigs)
    for c in clusters:
        for z in c:
            idx = np.flatnonzero((eigs == z) & (multiplicity == 0))[0]
            multiplicity[idx] = c.size
    n_distinct = len(_clusters(eigs[unstable]))
    stable_mod = np.abs(eigs[~unstable])
    return SpectralSplit(
        multipliers=eigs,
        unstable=unstable,
        multiplicity=multiplicity,
        borderline=np.abs(np.abs(eigs) - 1.0) < BORDERLINE_BAND,
        n=n_distinct,
        n0=n0,
        delta_bar=float(stable_mod.max()) if stable_mod.size else 0.0,
        P=P,
        basis_H1=H1,
        basis_H2=H2,
        threshold=thr,
        monodromy=A.copy(),
    )


def default_radius(sp: SpectralSplit) -> float:
    """Contour radius inside the gap: geometric midpoint of delta_bar and the smallest unstable modulus."""
    lam = np.abs(sp.multipliers[sp.unstable])
    lo = sp.delta_bar
    hi = float(lam.min()) if lam.size else 1.0
    if lo == 0.0:
        return 0.5 * min(hi, 1.0)
    r = np.sqrt(lo * hi)
    return float(r if r < 1.0 else np.sqrt(lo))


def _pairwise_sum(terms: list[np.ndarray]) -> np.ndarray:
    while len(terms) > 1:
        nxt = [terms[i] + terms[i + 1] for i in range(0, len(terms) - 1, 2)]
        if len(terms) % 2:
            nxt.append(terms[-1])
        terms = nxt
    return terms[0]


def riesz_projection(monodromy, radius: float, quadrature_points: int = 256) -> np.ndarray:
    """Projector onto multipliers outside ``|lambda| = radius``.

    Evaluates ``I - (1/2 pi i) \\oint (lambda I - A)^{-1} d lambda`` over the
    counterclockwise circle by the trapezoid rule.
    """
    A = np.asarray(monodromy.matrix if isinstance(monodromy, Monodromy) else monodromy, dtype=float)
    if quadrature_points < 32:
        raise ScenarioError("quadrature_points must be at least 32")
    if not radius > 0:
        raise ScenarioError("contour radius must be positive")
    mods = np.abs(np.linalg.eigvals(A))
    if np.any(np.abs(mods - radius) < 1e-8):
        raise NumericalError("contour radius lies on the spectrum: an eigenvalue is within 1e-8 of the circle")
    n = A.shape[0]
    eye = np.eye(n)
    lam = radius * np.exp(2j * np.pi * np.arange(quadrature_points) / quadrature_points)
    terms = []
    for z in lam:
        try:
            terms.append(z * np.linalg.solve(z * eye - A, eye))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular resolvent at a contour node") from exc
    inner = _pairwise_sum(terms) / quadrature_points
    P = eye - inner
    scale = max(1.0, float(np.max(np.abs(P.real))))
    if float(np.max(np.abs(P.imag))) > 1e-10 * scale:
        raise NumericalError("contour projector is not real to 1e-10")
    return np.ascontiguousarray(P.real)


def projector_at(system: PeriodicSystem, sp: SpectralSplit, t: float) -> np.ndarray:
    """``P(t) = Phi(t,0) P Phi(t,0)^{-1}``."""
    if not 0.0 <= t <= system.period:
        raise ScenarioError("projector_at needs t in [0, T]")
    if t == 0.0:
        return sp.P.copy()
    Phi = transition(system, t, 0.0)
    if np.linalg.cond(Phi) > 1e12:
        raise NumericalError("transition matrix is numerically singular (condition number > 1e12)")
    return np.linalg.solve(Phi.T, (Phi @ sp.P).T).T


def dual_projector(sp: SpectralSplit) -> np.ndarray:
    """Transpose of P: projects onto range(P^T), the dual unstable subspace used by certificate (c)."""
    return sp.P.T.copy()


def _h2_norms(sp: SpectralSplit, k_max: int) -> np.ndarray:
    # re-project each power: rounding otherwise seeds the unstable modes
    Q = np.eye(sp.n_x) - sp.P
    B = sp.basis_H2
    out = np.empty(k_max + 1)
    out[0] = np.linalg.norm(B, 2)
    for k in range(1, k_max + 1):
        B = Q @ (sp.monodromy @ B)
        out[k] = np.linalg.norm(B, 2)
    return out


def stable_decay_fit(system: PeriodicSystem, sp: SpectralSplit, k_max: int = 20) -> tuple[float, float]:
    """Least-squares fit ``log |Phi(kT,0)|_H2| ~ log C - rho k T`` over k = 1..k_max."""
    if sp.n0 >= sp.n_x:
        raise ScenarioError("H2 trivial: every multiplier is unstable")
    if k_max < 4:
        raise ScenarioError("k_max must be at least 4")
    nu = _h2_norms(sp, k_max)[1:]
    k = np.arange(1, k_max + 1)
    keep = nu > 1e-280
    if keep.sum() < 2:
        raise NumericalError("stable part vanishes too fast to fit a decay rate")
    slope, intercept = np.polyfit(k[keep] * system.period, np.log(nu[keep]), 1)
    rho = -float(slope)
    if not rho > 0:
        raise NumericalError(f"fitted decay rate on H2 is not positive ({rho:.3g})")
    return float(np.exp(intercept)), rho


def decay_constant(sp: SpectralSplit, delta0: float, k_cap: int = 200000) -> float:
    """``sup_k |P^k|_H2| delta0^{-k}`` for ``delta_bar < delta0 < 1``.

    Once the scaled power has norm at most one at some K, every later power is
    bounded by an earlier one, so the running maximum is already the supremum.
    """
    if sp.n0 >= sp.n_x:
        return 1.0
    Q = np.eye(sp.n_x) - sp.P
    B = sp.basis_H2.copy()
    best = 1.0
    weight = 1.0
    for k in range(1, k_cap + 1):
        B = Q @ (sp.monodromy @ B)
        weight /= delta0
        val = np.linalg.norm(B, 2) * weight
        best = max(best, val)
        if val <= 1.0:
            return float(best)
        # renormalize to keep B and weight in range
        s = np.linalg.norm(B, 2)
        if s < 1e-100 and s > 0:
            B /= s
            weight *= s
    raise NumericalError("decay constant on H2 did not settle")


def multipliers_csv(sp: SpectralSplit) -> str:
    buf = io.StringIO()
    buf.write("re,im,modulus,classification,algebraic_multiplicity\n")
    for z, u, b, m in zip(sp.multipliers, sp.unstable, sp.borderline, sp.multiplicity):
        cls = ("unstable" if u else "stable") + ("-borderline" if b else "")
        buf.write(f"{fmt(z.real)},{fmt(z.imag)},{fmt(abs(z))},{cls},{int(m)}\n")
    return buf.getvalue()
