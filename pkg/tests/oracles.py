"""Independent reference computations used to pin expected test values.

Everything here is deliberately primitive: dense quadrature, explicit
loops, closed forms.  None of it imports the package under test beyond
plain data containers, so a bug in the library cannot leak into the
oracle values.
"""

from __future__ import annotations

import numpy as np


def harmonic_mean_quadrature(a, lo=0.0, hi=1.0, n=200_001):
    """(integral of 1/a over one period)^-1 by dense trapezoid."""
    y = np.linspace(lo, hi, n)
    return (hi - lo) / np.trapezoid(1.0 / a(y), y)


def arithmetic_mean_quadrature(a, lo=0.0, hi=1.0, n=200_001):
    y = np.linspace(lo, hi, n)
    return np.trapezoid(a(y), y) / (hi - lo)


def heat_kernel_1d(x, t):
    """Fundamental solution of u_t = u_xx on the line (kappa = 1/4)."""
    x = np.asarray(x, dtype=float)
    return np.exp(-x * x / (4.0 * t)) / np.sqrt(4.0 * np.pi * t)


def separated_heat_solution(a, x, t, k=np.pi):
    """u solving u_t - a u_xx = sin(k x), u(.,0)=0, Dirichlet on (0,1)."""
    lam = a * k * k
    return np.sin(k * np.asarray(x)) * (1.0 - np.exp(-lam * t)) / lam


def crank_nicolson_reference(a_of_x, h, dt, T, forcing, lo=0.0, hi=1.0):
    """Plain dense Crank-Nicolson march for u_t = (a u_x)_x + F, Dirichlet.

    Independent of the package's sparse assembly: dense matrices, face
    coefficients by midpoint sampling.  Returns (x, u_final).
    """
    n = int(round((hi - lo) / h)) + 1
    x = np.linspace(lo, hi, n)
    faces = 0.5 * (x[:-1] + x[1:])
    af = np.asarray(a_of_x(faces), dtype=float)

    L = np.zeros((n, n))
    for i in range(1, n - 1):
        L[i, i - 1] = af[i - 1] / h ** 2
        L[i, i + 1] = af[i] / h ** 2
        L[i, i] = -(af[i - 1] + af[i]) / h ** 2
    ident = np.eye(n)
    A1 = ident - 0.5 * dt * L
    A2 = ident + 0.5 * dt * L
    # Dirichlet rows
    for mat in (A1, A2):
        mat[0, :] = 0.0
        mat[-1, :] = 0.0
        mat[0, 0] = 1.0
        mat[-1, -1] = 1.0

    steps = int(round(T / dt))
    u = np.zeros(n)
    for s in range(steps):
        t_mid = (s + 0.5) * dt
        rhs = A2 @ u + dt * forcing(x, t_mid)
        rhs[0] = 0.0
        rhs[-1] = 0.0
        u = np.linalg.solve(A1, rhs)
    return x, u


def brute_convolution_1d(vals, taps, offsets, wrap):
    """Direct loop convolution along the last axis; offsets in cells."""
    vals = np.asarray(vals, dtype=float)
    out = np.zeros_like(vals)
    n = vals.shape[-1]
    for j, off in enumerate(offsets):
        w = taps[j]
        for i in range(n):
            src = i - off
            if wrap:
                out[..., i] += w * vals[..., src % n]
            elif 0 <= src < n:
                out[..., i] += w * vals[..., src]
    return out


def face_harmonic_tensor_1d(a_of_y, h, n_periods=1):
    """Discrete effective coefficient of the h-grid medium.

    For the 1D static scheme with face-midpoint coefficients the exact
    discrete homogenized value is the harmonic mean of the face samples.
    """
    n = int(round(n_periods / h))
    faces = (np.arange(n) + 0.5) * h
    return 1.0 / np.mean(1.0 / np.asarray(a_of_y(faces), dtype=float))


def parabolic_distance(p, q):
    """|x-y| + sqrt(|t-s|) for points p=(x,t), q=(y,s)."""
    return abs(p[0] - q[0]) + np.sqrt(abs(p[1] - q[1]))
