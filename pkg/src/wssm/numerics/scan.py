"""Fused selective-scan kernels.

Both kernels walk one (sample, channel) pair at a time so the hidden state
stays in a length-s buffer. The backward kernel recomputes the states of its
channel instead of reading a stored (N, ..., Din, s) history, which keeps
memory traffic proportional to the inputs.
"""

from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _scan_fwd(u, delta, A, B, C, D, y):
    L, N, J = u.shape
    S = A.shape[1]
    h = np.empty(S)
    for l in range(L):
        for j in range(J):
            h[:] = 0.0
            for t in range(N):
                dt = delta[l, t, j]
                du = dt * u[l, t, j]
                acc = 0.0
                for s in range(S):
                    h[s] = math.exp(dt * A[j, s]) * h[s] + du * B[l, t, s]
                    acc += C[l, t, s] * h[s]
                y[l, t, j] = acc + D[j] * u[l, t, j]


@numba.njit(cache=True)
def _scan_bwd(u, delta, A, B, C, D, gy, gu, gdelta, gA, gB, gC, gD):
    L, N, J = u.shape
    S = A.shape[1]
    hs = np.empty((N, S))
    decay = np.empty((N, S))
    gh = np.empty(S)
    for l in range(L):
        for j in range(J):
            for s in range(S):
                prev = 0.0
                for t in range(N):
                    dt = delta[l, t, j]
                    a = math.exp(dt * A[j, s])
                    decay[t, s] = a
                    prev = a * prev + dt * u[l, t, j] * B[l, t, s]
                    hs[t, s] = prev
            gh[:] = 0.0
            for t in range(N - 1, -1, -1):
                dt = delta[l, t, j]
                ut = u[l, t, j]
                g = gy[l, t, j]
                gd = 0.0
                ghb = 0.0
                for s in range(S):
                    gh[s] += g * C[l, t, s]
                    gC[l, t, s] += hs[t, s] * g
                    hp = hs[t - 1, s] if t > 0 else 0.0
                    pre = gh[s] * hp * decay[t, s]
                    gA[j, s] += pre * dt
                    gd += pre * A[j, s]
                    ghb += gh[s] * B[l, t, s]
                    gB[l, t, s] += gh[s] * dt * ut
                    gh[s] *= decay[t, s]
                gdelta[l, t, j] = gd + ghb * ut
                gu[l, t, j] = g * D[j] + ghb * dt
                gD[j] += g * ut


def _flat(a, tail):
    return np.ascontiguousarray(a, dtype=np.float64).reshape((-1,) + tail)


def scan_forward(u, delta, A, B, C, D):
    """u, delta: (..., N, Din); A: (Din, s); B, C: (..., N, s); D: (Din,) -> y like u."""
    n, din = u.shape[-2:]
    s = A.shape[1]
    y = np.empty((int(np.prod(u.shape[:-2], dtype=np.int64)), n, din))
    _scan_fwd(_flat(u, (n, din)), _flat(delta, (n, din)), np.ascontiguousarray(A),
              _flat(B, (n, s)), _flat(C, (n, s)), np.ascontiguousarray(D), y)
    return y.reshape(u.shape)


def scan_backward(u, delta, A, B, C, D, gy):
    n, din = u.shape[-2:]
    s = A.shape[1]
    args = (_flat(u, (n, din)), _flat(delta, (n, din)), np.ascontiguousarray(A),
            _flat(B, (n, s)), _flat(C, (n, s)), np.ascontiguousarray(D))
    gu = np.empty_like(args[0])
    gdelta = np.empty_like(args[0])
    gA = np.zeros_like(args[2])
    gB = np.zeros_like(args[3])
    gC = np.zeros_like(args[4])
    gD = np.zeros_like(args[5])
    _scan_bwd(*args, _flat(gy, (n, din)), gu, gdelta, gA, gB, gC, gD)
    return (gu.reshape(u.shape), gdelta.reshape(u.shape), gA,
            gB.reshape(B.shape), gC.reshape(C.shape), gD)
