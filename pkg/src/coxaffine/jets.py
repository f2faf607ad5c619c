"""Truncated power series (jets) for exact higher-order derivatives.

A ``Jet`` of order K stores the Taylor coefficients ``c[0..K]`` of a function
of one variable around an expansion point.  Arithmetic propagates the
coefficients by exact truncated-power-series algebra, so after pushing a jet
through any composition of the supported operations, ``K! * c[K]`` is the
K-th derivative of the composition, accurate to roundoff rather than to a
finite-difference step.

The order-0 coefficient of every operation is computed by the identical
scalar arithmetic that plain floats would use, so evaluating a formula on
``Jet.variable(x0, K)`` yields the same order-0 result, bitwise, as
evaluating it on the float ``x0``.  The module-level helpers (``exp``,
``log``, ...) dispatch on type to make one implementation of a formula
servable by both floats and jets.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["Jet", "exp", "log", "sqrt", "expm1", "log1p"]


class Jet:
    """Taylor coefficients of a scalar function around an expansion point."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.asarray(coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("jet coefficients must be a nonempty 1-d sequence")
        self.coeffs = c

    # ---- constructors -------------------------------------------------

    @classmethod
    def constant(cls, value: float, order: int) -> "Jet":
        c = np.zeros(order + 1)
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, value: float, order: int) -> "Jet":
        """The identity function expanded at ``value``."""
        c = np.zeros(order + 1)
        c[0] = value
        if order >= 1:
            c[1] = 1.0
        return cls(c)

    # ---- basic properties ---------------------------------------------

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    @property
    def value(self) -> float:
        return float(self.coeffs[0])

    def derivative(self, k: int) -> float:
        """k-th derivative of the represented function at the expansion point."""
        if k < 0 or k > self.order:
            raise ValueError(f"derivative order {k} outside jet order {self.order}")
        return float(self.coeffs[k] * math.factorial(k))

    def __repr__(self) -> str:
        return f"Jet({self.coeffs.tolist()})"

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ValueError("jet orders differ")
            return other.coeffs
        c = np.zeros(self.order + 1)
        c[0] = float(other)
        return c

    # ---- linear arithmetic ---------------------------------------------

    def __add__(self, other):
        return Jet(self.coeffs + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Jet(self.coeffs - self._coerce(other))

    def __rsub__(self, other):
        return Jet(self._coerce(other) - self.coeffs)

    def __neg__(self):
        return Jet(-self.coeffs)

    # ---- multiplicative arithmetic --------------------------------------

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coeffs * float(other))
        x, y = self.coeffs, self._coerce(other)
        K = self.order
        out = np.empty(K + 1)
        for n in range(K + 1):
            out[n] = np.dot(x[: n + 1], y[n::-1])
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coeffs / float(other))
        # z = x/y: z_n = (x_n - sum_{i=1..n} y_i z_{n-i}) / y_0
        x, y = self.coeffs, self._coerce(other)
        if y[0] == 0.0:
            raise ZeroDivisionError("division by a jet with zero leading coefficient")
        K = self.order
        out = np.empty(K + 1)
        out[0] = x[0] / y[0]
        for n in range(1, K + 1):
            out[n] = (x[n] - np.dot(y[1 : n + 1], out[n - 1 :: -1])) / y[0]
        return Jet(out)

    def __rtruediv__(self, other):
        return Jet(self._coerce(other)) / self

    # ---- elementary functions -------------------------------------------
    #
    # Recurrences are the classical ones for power-series composition; each
    # keeps the order-0 slot identical to the scalar library call.

    def exp(self) -> "Jet":
        return Jet(self._exp_coeffs(math.exp(self.coeffs[0])))

    def expm1(self) -> "Jet":
        # same derivative tower as exp; only the level term differs
        x0 = self.coeffs[0]
        out = self._exp_coeffs(math.exp(x0))
        out[0] = math.expm1(x0)
        return Jet(out)

    def _exp_coeffs(self, y0: float) -> np.ndarray:
        # y' = x' y  =>  n y_n = sum_{i=1..n} i x_i y_{n-i}
        x = self.coeffs
        K = self.order
        out = np.empty(K + 1)
        out[0] = y0
        i_x = np.arange(K + 1) * x
        for n in range(1, K + 1):
            out[n] = np.dot(i_x[1 : n + 1], out[n - 1 :: -1]) / n
        return out

    def log(self) -> "Jet":
        x = self.coeffs
        if x[0] <= 0.0:
            raise ValueError("log of jet with nonpositive level")
        return Jet(self._log_coeffs(x, math.log(x[0])))

    def log1p(self) -> "Jet":
        # log(1+x) with the level computed by log1p for small |x|
        x = self.coeffs.copy()
        y0 = math.log1p(x[0])
        x[0] += 1.0
        if x[0] <= 0.0:
            raise ValueError("log1p of jet with level <= -1")
        return Jet(self._log_coeffs(x, y0))

    @staticmethod
    def _log_coeffs(x: np.ndarray, y0: float) -> np.ndarray:
        # x y' = x'  =>  n x_0 y_n = n x_n - sum_{j=1..n-1} (n-j) x_j y_{n-j}
        K = x.size - 1
        out = np.empty(K + 1)
        out[0] = y0
        for n in range(1, K + 1):
            s = 0.0
            if n > 1:
                j = np.arange(1, n)
                s = np.dot((n - j) * x[1:n], out[n - 1 : 0 : -1])
            out[n] = (x[n] - s / n) / x[0]
        return out

    def sqrt(self) -> "Jet":
        x = self.coeffs
        if x[0] < 0.0:
            raise ValueError("sqrt of jet with negative level")
        K = self.order
        out = np.empty(K + 1)
        out[0] = math.sqrt(x[0])
        # y^2 = x  =>  2 y_0 y_n = x_n - sum_{i=1..n-1} y_i y_{n-i}
        for n in range(1, K + 1):
            s = np.dot(out[1:n], out[n - 1 : 0 : -1]) if n > 1 else 0.0
            out[n] = (x[n] - s) / (2.0 * out[0])
        return Jet(out)


def _dispatch(x, jet_method: str, scalar_fn):
    if isinstance(x, Jet):
        return getattr(x, jet_method)()
    return scalar_fn(x)


def exp(x):
    """exp for floats or jets."""
    return _dispatch(x, "exp", math.exp)


def log(x):
    return _dispatch(x, "log", math.log)


def sqrt(x):
    return _dispatch(x, "sqrt", math.sqrt)


def expm1(x):
    return _dispatch(x, "expm1", math.expm1)


def log1p(x):
    return _dispatch(x, "log1p", math.log1p)
