"""Piecewise-linear interpolation that tolerates repeated nodes.

A node listed twice marks a jump: the first copy holds the left limit and the
second the right limit. ``side=+1`` evaluates right limits, ``side=-1`` left
limits.
"""

from __future__ import annotations

import numpy as np


class PiecewiseLinear:
    def __init__(self, nodes, values):
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("need at least two interpolation nodes")
        if values.shape[0] != nodes.size:
            raise ValueError("values and nodes disagree in length")
        if np.any(np.diff(nodes) < 0):
            raise ValueError("interpolation nodes must be non-decreasing")
        if nodes.size > 2 and np.any((nodes[2:] == nodes[:-2])):
            raise ValueError("a node may appear at most twice")
        self.nodes = nodes
        self.values = values
        self._snap = 1e-12 * max(abs(nodes[-1] - nodes[0]), 1.0)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])

    def __call__(self, t, side: int = 1) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = self.nodes
        # snap times sitting within rounding distance of a node onto it
        j = np.clip(np.searchsorted(x, t), 1, x.size - 1)
        near = np.where(np.abs(t - x[j - 1]) < np.abs(t - x[j]), x[j - 1], x[j])
        t = np.where(np.abs(t - near) <= self._snap, near, t)
        if side >= 0:
            i = np.searchsorted(x, t, side="right") - 1
        else:
            i = np.searchsorted(x, t, side="left") - 1
        i = np.clip(i, 0, x.size - 2)
        # never interpolate across a zero-length (jump) interval
        width = x[i + 1] - x[i]
        zero = width == 0.0
        if np.any(zero):
            i = np.where(zero & (side >= 0), np.minimum(i + 1, x.size - 2), i)
            i = np.where(zero & (side < 0), np.maximum(i - 1, 0), i)
            width = x[i + 1] - x[i]
        w = np.where(width > 0, (t - x[i]) / np.where(width > 0, width, 1.0), 0.0)
        w = np.clip(w, 0.0, 1.0)
        shape = (-1,) + (1,) * (self.values.ndim - 1)
        w = w.reshape(shape)
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]
