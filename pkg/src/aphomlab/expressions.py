"""Closed-form scalar expressions with analytic derivatives.

Problem data (forcing, boundary values, initial values) and manufactured
solutions are restricted to a small catalogue of named closed forms.  Each
form knows its own space and time derivatives, so convergence studies can
build forcing terms without symbolic algebra or finite differencing.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigInvalid

__all__ = ["Expression", "Constant", "SineProduct", "Bump", "expression_from_json"]


class Expression:
    """Scalar function of (x, t) with analytic first and second derivatives.

    All evaluation methods accept ``xs`` as a tuple of coordinate arrays
    (one per spatial axis, mutually broadcastable) and a scalar time ``t``;
    they return an array of the broadcast shape.
    """

    d = None  # spatial dimension

    def value(self, xs, t):
        raise NotImplementedError

    def dt(self, xs, t):
        raise NotImplementedError

    def dx(self, xs, t, axis):
        raise NotImplementedError

    def dxx(self, xs, t, a, b):
        raise NotImplementedError

    def __call__(self, xs, t):
        return self.value(xs, t)


class Constant(Expression):
    """Constant in space and time."""

    def __init__(self, c, d=1):
        self.c = float(c)
        self.d = int(d)

    def _full(self, xs, val):
        shape = np.broadcast_shapes(*(np.shape(x) for x in xs)) if xs else ()
        return np.full(shape, val)

    def value(self, xs, t):
        return self._full(xs, self.c)

    def dt(self, xs, t):
        return self._full(xs, 0.0)

    def dx(self, xs, t, axis):
        return self._full(xs, 0.0)

    def dxx(self, xs, t, a, b):
        return self._full(xs, 0.0)


class SineProduct(Expression):
    """amp * prod_i sin(k_i x_i + phi_i) * exp(-decay t) * cos(omega t + tau)."""

    def __init__(self, amp, k, phase=None, decay=0.0, omega=0.0, tphase=0.0):
        self.amp = float(amp)
        self.k = np.atleast_1d(np.asarray(k, dtype=float))
        self.d = self.k.size
        if phase is None:
            phase = np.zeros(self.d)
        self.phase = np.atleast_1d(np.asarray(phase, dtype=float))
        if self.phase.size != self.d:
            raise ConfigInvalid("phase length must match k length")
        self.decay = float(decay)
        self.omega = float(omega)
        self.tphase = float(tphase)

    def _factors(self, xs):
        return [np.sin(self.k[i] * np.asarray(xs[i]) + self.phase[i])
                for i in range(self.d)]

    def _tfac(self, t):
        return math.exp(-self.decay * t) * math.cos(self.omega * t + self.tphase)

    def _dtfac(self, t):
        e = math.exp(-self.decay * t)
        return e * (-self.decay * math.cos(self.omega * t + self.tphase)
                    - self.omega * math.sin(self.omega * t + self.tphase))

    def value(self, xs, t):
        out = self.amp * self._tfac(t)
        for f in self._factors(xs):
            out = out * f
        return np.asarray(out)

    def dt(self, xs, t):
        out = self.amp * self._dtfac(t)
        for f in self._factors(xs):
            out = out * f
        return np.asarray(out)

    def dx(self, xs, t, axis):
        out = self.amp * self._tfac(t)
        for i in range(self.d):
            x = np.asarray(xs[i])
            if i == axis:
                out = out * self.k[i] * np.cos(self.k[i] * x + self.phase[i])
            else:
                out = out * np.sin(self.k[i] * x + self.phase[i])
        return np.asarray(out)

    def dxx(self, xs, t, a, b):
        out = self.amp * self._tfac(t)
        for i in range(self.d):
            x = np.asarray(xs[i])
            th = self.k[i] * x + self.phase[i]
            if i == a and i == b:
                out = out * (-self.k[i] ** 2) * np.sin(th)
            elif i == a or i == b:
                out = out * self.k[i] * np.cos(th)
            else:
                out = out * np.sin(th)
        return np.asarray(out)


def _beta(z):
    # compactly supported C^3 profile (1 - z^2)^4 on |z| < 1
    w = np.clip(1.0 - z * z, 0.0, None)
    return w ** 4


def _dbeta(z):
    w = np.clip(1.0 - z * z, 0.0, None)
    return -8.0 * z * w ** 3


def _ddbeta(z):
    w = np.clip(1.0 - z * z, 0.0, None)
    return w ** 2 * (56.0 * z * z - 8.0) * (w > 0)


class Bump(Expression):
    """Separable compact bump: amp * prod_i beta((x_i-c_i)/r) * beta((t-t0)/rt).

    ``beta(z) = (1-z^2)^4`` on ``|z|<1`` and zero outside.  The time factor
    is omitted when ``rt`` is None.
    """

    def __init__(self, amp, center, radius, t0=None, rt=None):
        self.amp = float(amp)
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.d = self.center.size
        self.radius = float(radius)
        if self.radius <= 0:
            raise ConfigInvalid("bump radius must be positive")
        self.t0 = None if t0 is None else float(t0)
        self.rt = None if rt is None else float(rt)
        if (self.t0 is None) != (self.rt is None):
            raise ConfigInvalid("bump t0 and rt must be given together")

    def _z(self, xs, i):
        return (np.asarray(xs[i]) - self.center[i]) / self.radius

    def _tfac(self, t):
        if self.t0 is None:
            return 1.0
        return float(_beta(np.asarray((t - self.t0) / self.rt)))

    def _dtfac(self, t):
        if self.t0 is None:
            return 0.0
        return float(_dbeta(np.asarray((t - self.t0) / self.rt))) / self.rt

    def value(self, xs, t):
        out = self.amp * self._tfac(t)
        for i in range(self.d):
            out = out * _beta(self._z(xs, i))
        return np.asarray(out)

    def dt(self, xs, t):
        out = self.amp * self._dtfac(t)
        for i in range(self.d):
            out = out * _beta(self._z(xs, i))
        return np.asarray(out)

    def dx(self, xs, t, axis):
        out = self.amp * self._tfac(t)
        for i in range(self.d):
            z = self._z(xs, i)
            if i == axis:
                out = out * _dbeta(z) / self.radius
            else:
                out = out * _beta(z)
        return np.asarray(out)

    def dxx(self, xs, t, a, b):
        out = self.amp * self._tfac(t)
        for i in range(self.d):
            z = self._z(xs, i)
            if i == a and i == b:
                out = out * _ddbeta(z) / self.radius ** 2
            elif i == a or i == b:
                out = out * _dbeta(z) / self.radius
            else:
                out = out * _beta(z)
        return np.asarray(out)


_KINDS = {"constant", "sine-product", "bump"}


def expression_from_json(obj, d=None):
    """Build an Expression from its JSON description.

    Accepts a bare number (shorthand for a constant) or a dict with a
    ``kind`` key from {constant, sine-product, bump}.  Unknown kinds and
    malformed parameters raise ConfigInvalid; there is deliberately no
    general expression parser.
    """
    if obj is None:
        return Constant(0.0, d=d or 1)
    if isinstance(obj, (int, float)):
        return Constant(float(obj), d=d or 1)
    if not isinstance(obj, dict):
        raise ConfigInvalid(f"expression must be a number or an object, got {type(obj).__name__}")
    kind = obj.get("kind")
    if kind not in _KINDS:
        raise ConfigInvalid(f"unknown expression kind {kind!r}; allowed: {sorted(_KINDS)}")
    params = {k: v for k, v in obj.items() if k != "kind"}
    try:
        if kind == "constant":
            expr = Constant(params.pop("value"), d=params.pop("d", d or 1))
        elif kind == "sine-product":
            expr = SineProduct(
                params.pop("amp", 1.0), params.pop("k"),
                phase=params.pop("phase", None), decay=params.pop("decay", 0.0),
                omega=params.pop("omega", 0.0), tphase=params.pop("tphase", 0.0))
        else:
            expr = Bump(
                params.pop("amp", 1.0), params.pop("center"), params.pop("radius"),
                t0=params.pop("t0", None), rt=params.pop("rt", None))
    except KeyError as exc:
        raise ConfigInvalid(f"expression kind {kind!r} missing parameter {exc}") from None
    if params:
        raise ConfigInvalid(f"expression kind {kind!r} got unexpected parameters {sorted(params)}")
    if d is not None and expr.d != d:
        raise ConfigInvalid(f"expression dimension {expr.d} does not match problem dimension {d}")
    return expr
