"""Backward Riccati sweep on per-step Hamiltonian maps.

Each step carries ``(X, Y)`` of the linear Hamiltonian system backward and
resets ``X = I``, so the Riccati iterate is updated by the Mobius map

    Q_i = (Psi21 + Psi22 Q_{i+1}) (Psi11 + Psi12 Q_{i+1})^{-1}.

The matrix ``X_i = Psi11 + Psi12 Q_{i+1}`` is the inverse of the closed-loop
step map, which lets callers rebuild the optimal closed-loop transition
without integrating the (possibly very stiff) closed loop.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

BLOWUP = 1e14


@njit(cache=True)
def mobius_sweep(psi, start, nsteps, q_end, store_q, store_x):
    """Sweep ``nsteps`` steps backward; step ``j`` uses ``psi[(start + j) % P]``.

    ``psi`` holds the four ``n x n`` blocks per step, shape (P, 4, n, n).

    Returns ``(Q0, Qs, Xs, status)``; status 0 ok, 1 blow-up or non-finite entries.
    """
    P = psi.shape[0]
    n = q_end.shape[0]
    qs = np.zeros((nsteps + 1 if store_q else 1, n, n))
    xs = np.zeros((nsteps if store_x else 1, n, n))
    q = q_end.copy()
    if store_q:
        qs[nsteps] = q
    status = 0
    for j in range(nsteps - 1, -1, -1):
        p = psi[(start + j) % P]
        x = p[0] + p[1] @ q
        y = p[2] + p[3] @ q
        # q = y x^{-1}  <=>  x^T q^T = y^T
        qt = np.linalg.solve(x.T, y.T)
        q = 0.5 * (qt + qt.T)
        if store_x:
            xs[j] = x
        if store_q:
            qs[j] = q
        big = 0.0
        for a in range(n):
            for b in range(n):
                v = abs(q[a, b])
                if not v <= BLOWUP:  # also catches NaN
                    big = v
                    break
        if big != 0.0:
            status = 1
            break
    return q, qs, xs, status
