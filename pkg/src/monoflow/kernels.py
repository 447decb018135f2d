"""Named potentials and interaction kernels with analytic derivatives.

Scalar functions act on arrays of points ``X`` with shape (P, d) and
return values (P,), gradients (P, d) and Hessians (P, d, d).  Pair
kernels ``W(x, y)`` act elementwise on two arrays of equal length.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigurationError


class ScalarFunction:
    """A function ``V: R^d -> R`` with optional analytic derivatives."""

    name = "custom"
    #: True when V(z) = V(-z); required for self-interactions
    even = False

    def __init__(self, fn: Callable | None = None, grad: Callable | None = None,
                 hess: Callable | None = None, even: bool = False):
        self._fn, self._grad, self._hess = fn, grad, hess
        self.even = even

    def value(self, X):
        return np.asarray(self._fn(X), dtype=float)

    def grad(self, X):
        if self._grad is None:
            return fd_gradient(self.value, X)
        return np.asarray(self._grad(X), dtype=float)

    def hess(self, X):
        if self._hess is None:
            return fd_hessian(self.grad, X)
        return np.asarray(self._hess(X), dtype=float)

    def params(self) -> dict:
        return {}

    def __repr__(self):
        return f"{type(self).__name__}({self.params()})"


def _fd_step(X):
    return 1e-6 * (1.0 + np.abs(X))


def fd_gradient(fn, X):
    """Central-difference gradient with step ``1e-6 * (1 + |x|)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = np.empty_like(X)
    H = _fd_step(X)
    for a in range(X.shape[1]):
        E = np.zeros_like(X)
        E[:, a] = H[:, a]
        G[:, a] = (fn(X + E) - fn(X - E)) / (2 * H[:, a])
    return G


def fd_hessian(grad, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P, d = X.shape
    Hm = np.empty((P, d, d))
    H = _fd_step(X) * 10.0
    for a in range(d):
        E = np.zeros_like(X)
        E[:, a] = H[:, a]
        Hm[:, :, a] = (grad(X + E) - grad(X - E)) / (2 * H[:, a, None])
    return 0.5 * (Hm + Hm.transpose(0, 2, 1))


class Quadratic(ScalarFunction):
    """``(k/2) |x - center|^2``."""

    name = "quadratic"

    def __init__(self, k: float = 1.0, center=None):
        self.k = float(k)
        self.center = None if center is None else np.asarray(center, dtype=float)
        self.even = center is None or not np.any(self.center)

    def _z(self, X):
        return X if self.center is None else X - self.center

    def value(self, X):
        return 0.5 * self.k * np.sum(self._z(X) ** 2, axis=1)

    def grad(self, X):
        return self.k * self._z(X)

    def hess(self, X):
        P, d = X.shape
        return np.broadcast_to(self.k * np.eye(d), (P, d, d)).copy()

    def params(self):
        p = {"k": self.k}
        if self.center is not None:
            p["center"] = self.center.tolist()
        return p


class Quartic(ScalarFunction):
    """``(a/2) |x|^4``."""

    name = "quartic"
    even = True

    def __init__(self, a: float = 1.0):
        self.a = float(a)

    def value(self, X):
        r2 = np.sum(X ** 2, axis=1)
        return 0.5 * self.a * r2 ** 2

    def grad(self, X):
        r2 = np.sum(X ** 2, axis=1)
        return 2.0 * self.a * r2[:, None] * X

    def hess(self, X):
        P, d = X.shape
        r2 = np.sum(X ** 2, axis=1)
        return 2.0 * self.a * (r2[:, None, None] * np.eye(d) + 2.0 * X[:, :, None] * X[:, None, :])

    def params(self):
        return {"a": self.a}


class _Radial(ScalarFunction):
    """Radial function ``phi(r)`` with Hessian ``g(r) x x^T + f(r) I``.

    Subclasses provide ``phi``, ``f = phi'(r)/r`` and ``g = (phi'' - phi'/r)/r^2``.
    """

    even = True

    def value(self, X):
        return self.phi(np.sqrt(np.sum(X ** 2, axis=1)))

    def grad(self, X):
        r = np.sqrt(np.sum(X ** 2, axis=1))
        return self.f(r)[:, None] * X

    def hess(self, X):
        P, d = X.shape
        r = np.sqrt(np.sum(X ** 2, axis=1))
        return (self.g(r)[:, None, None] * X[:, :, None] * X[:, None, :]
                + self.f(r)[:, None, None] * np.eye(d))

    def radial_eigenvalues(self, r):
        """Tangential ``f(r)`` and radial ``f(r) + g(r) r^2`` Hessian eigenvalues."""
        r = np.asarray(r, dtype=float)
        f = self.f(r)
        return f, f + self.g(r) * r * r


def _pw(r, p):
    # r**p with the convention 0**0 = 1 and no warnings for p < 0 at r = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, np.power(np.where(r > 0, r, 1.0), p), 1.0 if p == 0 else (0.0 if p > 0 else np.inf))


class Power(_Radial):
    """``|x|^k / k`` for ``k >= 1``."""

    name = "power"

    def __init__(self, k: float = 2.0):
        if k < 1:
            raise ConfigurationError("power kernel needs k >= 1")
        self.k = float(k)

    def phi(self, r):
        return _pw(r, self.k) / self.k

    def f(self, r):
        return _pw(r, self.k - 2)

    def g(self, r):
        return (self.k - 2) * _pw(r, self.k - 4) if self.k != 2 else np.zeros_like(np.asarray(r, float))

    def params(self):
        return {"k": self.k}


class PowerLaw(_Radial):
    """Attractive-repulsive ``|x|^a / a - |x|^b / b`` with ``a > b >= 2``."""

    name = "power_law"

    def __init__(self, a: float = 4.0, b: float = 2.0):
        if not (a > b >= 2):
            raise ConfigurationError("power_law kernel needs a > b >= 2")
        self.a, self.b = float(a), float(b)

    def phi(self, r):
        return _pw(r, self.a) / self.a - _pw(r, self.b) / self.b

    def f(self, r):
        return _pw(r, self.a - 2) - _pw(r, self.b - 2)

    def g(self, r):
        out = np.zeros_like(np.asarray(r, float))
        if self.a != 2:
            out = out + (self.a - 2) * _pw(r, self.a - 4)
        if self.b != 2:
            out = out - (self.b - 2) * _pw(r, self.b - 4)
        return out

    def params(self):
        return {"a": self.a, "b": self.b}


class Morse(ScalarFunction):
    """Morse-type kernel ``C_r exp(-q/l_r) - C_a exp(-q/l_a)``.

    ``norm="l2sq"`` uses ``q = |x|^2`` (smooth); ``norm="l1"`` uses
    ``q = |x|_1`` and has kinks on the coordinate axes.
    """

    name = "morse"
    even = True

    def __init__(self, Cr: float = 8.0, lr: float = 0.5, Ca: float = 2.0, la: float = 1.0,
                 norm: str = "l2sq"):
        if norm not in ("l2sq", "l1"):
            raise ConfigurationError(f"unknown Morse norm {norm!r}")
        self.Cr, self.lr, self.Ca, self.la, self.norm = float(Cr), float(lr), float(Ca), float(la), norm

    def _q(self, X):
        return np.sum(X ** 2, axis=1) if self.norm == "l2sq" else np.sum(np.abs(X), axis=1)

    def value(self, X):
        q = self._q(X)
        return self.Cr * np.exp(-q / self.lr) - self.Ca * np.exp(-q / self.la)

    def _dphi(self, q):
        return -self.Cr / self.lr * np.exp(-q / self.lr) + self.Ca / self.la * np.exp(-q / self.la)

    def _ddphi(self, q):
        return self.Cr / self.lr ** 2 * np.exp(-q / self.lr) - self.Ca / self.la ** 2 * np.exp(-q / self.la)

    def grad(self, X):
        q = self._q(X)
        dq = 2.0 * X if self.norm == "l2sq" else np.sign(X)
        return self._dphi(q)[:, None] * dq

    def hess(self, X):
        P, d = X.shape
        q = self._q(X)
        if self.norm == "l2sq":
            return (4.0 * self._ddphi(q)[:, None, None] * X[:, :, None] * X[:, None, :]
                    + 2.0 * self._dphi(q)[:, None, None] * np.eye(d))
        s = np.sign(X)
        return self._ddphi(q)[:, None, None] * s[:, :, None] * s[:, None, :]

    def params(self):
        return {"Cr": self.Cr, "lr": self.lr, "Ca": self.Ca, "la": self.la, "norm": self.norm}


POTENTIALS = {
    "quadratic": Quadratic,
    "quartic": Quartic,
    "power": Power,
    "power_law": PowerLaw,
    "morse": Morse,
}


def make_potential(name: str, **params) -> ScalarFunction:
    try:
        cls = POTENTIALS[name]
    except KeyError:
        raise ConfigurationError(f"unknown potential {name!r}; known: {sorted(POTENTIALS)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {name}: {exc}") from None


# ---------------------------------------------------------------------------
# pair kernels W(x, y)

class PairKernel:
    """Two-argument kernel evaluated elementwise on (P, dx) and (P, dy) arrays."""

    name = "pair"
    translation_invariant = False

    def value(self, X, Y):
        raise NotImplementedError

    def grad_x(self, X, Y):
        return fd_gradient(lambda Z: self.value(Z, Y), X)

    def grad_y(self, X, Y):
        return fd_gradient(lambda Z: self.value(X, Z), Y)

    def hess_xx(self, X, Y):
        return fd_hessian(lambda Z: self.grad_x(Z, Y), X)

    def hess_yy(self, X, Y):
        return fd_hessian(lambda Z: self.grad_y(X, Z), Y)

    def hess_xy(self, X, Y):
        """Mixed block ``d^2 W / dx dy`` with shape (P, dx, dy)."""
        X = np.atleast_2d(X)
        Y = np.atleast_2d(Y)
        P, dy = Y.shape
        out = np.empty((P, X.shape[1], dy))
        H = _fd_step(Y)
        for b in range(dy):
            E = np.zeros_like(Y)
            E[:, b] = H[:, b]
            out[:, :, b] = (self.grad_x(X, Y + E) - self.grad_x(X, Y - E)) / (2 * H[:, b, None])
        return out

    def params(self) -> dict:
        return {}

    def __repr__(self):
        return f"{type(self).__name__}({self.params()})"


class TranslationKernel(PairKernel):
    """``W(x, y) = V(x - y)`` built from a scalar function."""

    translation_invariant = True

    def __init__(self, fn: ScalarFunction):
        self.fn = fn
        self.name = fn.name

    def value(self, X, Y):
        return self.fn.value(X - Y)

    def grad_x(self, X, Y):
        return self.fn.grad(X - Y)

    def grad_y(self, X, Y):
        return -self.fn.grad(X - Y)

    def hess_xx(self, X, Y):
        return self.fn.hess(X - Y)

    def hess_yy(self, X, Y):
        return self.fn.hess(X - Y)

    def hess_xy(self, X, Y):
        return -self.fn.hess(X - Y)

    def params(self):
        return {"fn": self.fn.name, **self.fn.params()}


class QuadraticCross(PairKernel):
    """``(c/2)|x|^2 + x^T B y``: strongly convex in ``x``, ``|B|``-Lipschitz coupling."""

    name = "quadratic_cross"

    def __init__(self, c: float = 2.0, B=-1.0):
        self.c = float(c)
        self.B = np.atleast_2d(np.asarray(B, dtype=float))

    def _B(self, dx, dy):
        if self.B.shape == (1, 1) and (dx, dy) != (1, 1):
            if dx != dy:
                raise ConfigurationError("scalar coupling needs equal dimensions")
            return self.B[0, 0] * np.eye(dx)
        return self.B

    def value(self, X, Y):
        B = self._B(X.shape[1], Y.shape[1])
        return 0.5 * self.c * np.sum(X ** 2, 1) + np.einsum("pi,ij,pj->p", X, B, Y)

    def grad_x(self, X, Y):
        return self.c * X + Y @ self._B(X.shape[1], Y.shape[1]).T

    def grad_y(self, X, Y):
        return X @ self._B(X.shape[1], Y.shape[1])

    def hess_xx(self, X, Y):
        P, d = X.shape
        return np.broadcast_to(self.c * np.eye(d), (P, d, d)).copy()

    def hess_yy(self, X, Y):
        P, d = Y.shape
        return np.zeros((P, d, d))

    def hess_xy(self, X, Y):
        B = self._B(X.shape[1], Y.shape[1])
        return np.broadcast_to(B, (X.shape[0],) + B.shape).copy()

    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.B, 2))

    def params(self):
        return {"c": self.c, "B": self.B.tolist()}


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


class Logistic(PairKernel):
    """Logistic classifier utilities and losses ``W(x, h)``.

    With ``theta(h) = (cos h_0, sin h_0)`` and ``z = c theta(h)^T x - h_1``
    the approval probability is ``p = 1 / (1 + exp(-z))``.  ``mode``
    selects ``p`` ("approval"), ``1 - p`` ("rejection"), ``log p``
    ("log_approval") or ``log(1 - p)`` ("log_rejection").  The first
    argument is a 2-d feature vector, the second the classifier
    parameters.
    """

    name = "logloss"
    MODES = ("approval", "rejection", "log_approval", "log_rejection")

    def __init__(self, mode: str = "approval", c: float = 2.0):
        if mode not in self.MODES:
            raise ConfigurationError(f"unknown logistic mode {mode!r}")
        self.mode, self.c = mode, float(c)

    def _z(self, X, Y):
        th = np.stack([np.cos(Y[:, 0]), np.sin(Y[:, 0])], axis=1)
        return self.c * np.sum(th * X, axis=1) - Y[:, 1]

    def _fprime(self, z):
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        if self.mode == "approval":
            return p * (1 - p)
        if self.mode == "rejection":
            return -p * (1 - p)
        if self.mode == "log_approval":
            return 1 - p
        return -p

    def value(self, X, Y):
        z = self._z(X, Y)
        if self.mode == "approval":
            return 0.5 * (1.0 + np.tanh(0.5 * z))
        if self.mode == "rejection":
            return 0.5 * (1.0 - np.tanh(0.5 * z))
        if self.mode == "log_approval":
            return _log_sigmoid(z)
        return _log_sigmoid(-z)

    def grad_x(self, X, Y):
        fp = self._fprime(self._z(X, Y))
        th = np.stack([np.cos(Y[:, 0]), np.sin(Y[:, 0])], axis=1)
        return (fp * self.c)[:, None] * th

    def grad_y(self, X, Y):
        fp = self._fprime(self._z(X, Y))
        dth = np.stack([-np.sin(Y[:, 0]), np.cos(Y[:, 0])], axis=1)
        return np.stack([fp * self.c * np.sum(dth * X, axis=1), -fp], axis=1)

    def params(self):
        return {"mode": self.mode, "c": self.c}


def make_pair_kernel(name: str, **params) -> PairKernel:
    """Build a pair kernel by name.

    ``quadratic_cross`` and ``logloss`` are genuinely two-argument; any
    potential name gives the translation-invariant kernel ``V(x - y)``.
    """
    if name == "quadratic_cross":
        return QuadraticCross(**params)
    if name in ("logloss", "logistic"):
        return Logistic(**params)
    return TranslationKernel(make_potential(name, **params))
