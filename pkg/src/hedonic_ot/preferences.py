"""Preference functions f(x, z) of an agent type x for a contract z.

Every method broadcasts over leading axes: ``x`` and ``z`` have shape
``(..., n)``; values come back with shape ``(...)``, gradients ``(..., n)``
and second-derivative blocks ``(..., n, n)``.  Block ``hess_xz`` has entry
``[a, b] = d^2 f / dx_a dz_b``; ``hess_zx`` is its transpose.
"""

import numpy as np

from .errors import ValidationError


def _eye_like(shape, n):
    return np.broadcast_to(np.eye(n), tuple(shape) + (n, n)).copy()


def _batch_shape(x, z):
    return np.broadcast_shapes(np.shape(x)[:-1], np.shape(z)[:-1])


def _check_spd(Q, name):
    Q = np.array(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValidationError(f"{name} must be a square matrix")
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise ValidationError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(Q).min() <= 0:
        raise ValidationError(f"{name} must be positive definite")
    return Q


class PreferenceFunction:
    """Base class.  Subclasses define ``kind`` and the derivative blocks."""

    kind = None
    dim = None

    def value(self, x, z):
        raise NotImplementedError

    def grad_x(self, x, z):
        raise NotImplementedError

    def grad_z(self, x, z):
        raise NotImplementedError

    def hess_xz(self, x, z):
        raise NotImplementedError

    def hess_zz(self, x, z):
        raise NotImplementedError

    def hess_xx(self, x, z):
        raise NotImplementedError

    def hess_zx(self, x, z):
        return np.swapaxes(self.hess_xz(x, z), -1, -2)

    def params(self):
        return {}

    def to_dict(self):
        return {"kind": self.kind, **self.params()}

    def __repr__(self):
        p = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({p})"


class Quadratic(PreferenceFunction):
    """f(x, z) = -|x - z|^2."""

    kind = "quadratic"

    def __init__(self, dim):
        self.dim = int(dim)

    def value(self, x, z):
        d = np.asarray(x) - np.asarray(z)
        return -np.einsum("...i,...i->...", d, d)

    def grad_x(self, x, z):
        return -2.0 * (np.asarray(x) - np.asarray(z))

    def grad_z(self, x, z):
        return 2.0 * (np.asarray(x) - np.asarray(z))

    def hess_xz(self, x, z):
        return 2.0 * _eye_like(_batch_shape(x, z), self.dim)

    def hess_zz(self, x, z):
        return -2.0 * _eye_like(_batch_shape(x, z), self.dim)

    def hess_xx(self, x, z):
        return -2.0 * _eye_like(_batch_shape(x, z), self.dim)


class Linear(PreferenceFunction):
    """f(x, z) = x . z  (not concave in z on its own)."""

    kind = "linear"

    def __init__(self, dim):
        self.dim = int(dim)

    def value(self, x, z):
        return np.einsum("...i,...i->...", np.asarray(x, float), np.asarray(z, float))

    def grad_x(self, x, z):
        return np.broadcast_to(np.asarray(z, float), _batch_shape(x, z) + (self.dim,)).copy()

    def grad_z(self, x, z):
        return np.broadcast_to(np.asarray(x, float), _batch_shape(x, z) + (self.dim,)).copy()

    def hess_xz(self, x, z):
        return _eye_like(_batch_shape(x, z), self.dim)

    def hess_zz(self, x, z):
        return np.zeros(_batch_shape(x, z) + (self.dim, self.dim))

    def hess_xx(self, x, z):
        return np.zeros(_batch_shape(x, z) + (self.dim, self.dim))


class HeinichHead(PreferenceFunction):
    """f(x, z) = x . z - h*(z) for h(s) = s^T Q s, so that h*(z) = z^T Q^{-1} z / 4.

    Paired with ``Linear`` for the remaining agents, the surplus becomes
    b(x_1, ..., x_m) = h(x_1 + ... + x_m), attained at z = 2 Q (x_1 + ... + x_m).
    """

    kind = "heinich"

    def __init__(self, Q):
        self.Q = _check_spd(Q, "Q")
        self.dim = self.Q.shape[0]
        self.Qinv = np.linalg.inv(self.Q)
        self.Qinv = 0.5 * (self.Qinv + self.Qinv.T)

    def h(self, s):
        s = np.asarray(s, float)
        return np.einsum("...i,ij,...j->...", s, self.Q, s)

    def h_star(self, z):
        z = np.asarray(z, float)
        return 0.25 * np.einsum("...i,ij,...j->...", z, self.Qinv, z)

    def value(self, x, z):
        x, z = np.asarray(x, float), np.asarray(z, float)
        return np.einsum("...i,...i->...", x, z) - self.h_star(z)

    def grad_x(self, x, z):
        return np.broadcast_to(np.asarray(z, float), _batch_shape(x, z) + (self.dim,)).copy()

    def grad_z(self, x, z):
        x, z = np.asarray(x, float), np.asarray(z, float)
        return x - 0.5 * z @ self.Qinv

    def hess_xz(self, x, z):
        return _eye_like(_batch_shape(x, z), self.dim)

    def hess_zz(self, x, z):
        return np.broadcast_to(-0.5 * self.Qinv, _batch_shape(x, z) + (self.dim, self.dim)).copy()

    def hess_xx(self, x, z):
        return np.zeros(_batch_shape(x, z) + (self.dim, self.dim))

    def params(self):
        return {"Q": self.Q.tolist()}


class _SumPreference(PreferenceFunction):
    """f(x, z) = h(x + z); all derivative blocks coincide with those of h."""

    def _h(self, y):
        raise NotImplementedError

    def _dh(self, y):
        raise NotImplementedError

    def _d2h(self, y):
        raise NotImplementedError

    def _y(self, x, z):
        return np.asarray(x, float) + np.asarray(z, float)

    def value(self, x, z):
        return self._h(self._y(x, z))

    def grad_x(self, x, z):
        return self._dh(self._y(x, z))

    grad_z = grad_x

    def hess_xz(self, x, z):
        return self._d2h(self._y(x, z))

    hess_zz = hess_xz
    hess_xx = hess_xz


class Brenier(_SumPreference):
    """f(x, z) = -sqrt(1 + |x + z|^2)."""

    kind = "brenier"

    def __init__(self, dim):
        self.dim = int(dim)

    def _h(self, y):
        return -np.sqrt(1.0 + np.einsum("...i,...i->...", y, y))

    def _dh(self, y):
        s = np.sqrt(1.0 + np.einsum("...i,...i->...", y, y))
        return -y / s[..., None]

    def _d2h(self, y):
        s2 = 1.0 + np.einsum("...i,...i->...", y, y)
        outer = y[..., :, None] * y[..., None, :]
        return (outer / s2[..., None, None] - np.eye(self.dim)) / np.sqrt(s2)[..., None, None]


class ConcaveSum(_SumPreference):
    """f(x, z) = h(x + z) with h(y) = -(y-c)^T P (y-c) / 2 - alpha * sum_k log cosh(y_k - c_k).

    P symmetric positive definite and alpha >= 0 make h smooth, uniformly
    concave and coercive to -infinity.
    """

    kind = "concave_sum"

    def __init__(self, dim, P=None, alpha=0.5, center=None):
        self.dim = int(dim)
        self.P = _check_spd(np.eye(self.dim) if P is None else P, "P")
        if self.P.shape[0] != self.dim:
            raise ValidationError("P has the wrong size")
        self.alpha = float(alpha)
        if self.alpha < 0:
            raise ValidationError("alpha must be nonnegative")
        self.center = np.zeros(self.dim) if center is None else np.asarray(center, float)
        if self.center.shape != (self.dim,):
            raise ValidationError("center has the wrong size")

    def _h(self, y):
        u = y - self.center
        # log cosh(u) = |u| + log1p(exp(-2|u|)) - log 2, overflow-free
        a = np.abs(u)
        lc = a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
        return -0.5 * np.einsum("...i,ij,...j->...", u, self.P, u) - self.alpha * lc.sum(axis=-1)

    def _dh(self, y):
        u = y - self.center
        return -u @ self.P - self.alpha * np.tanh(u)

    def _d2h(self, y):
        u = y - self.center
        sech2 = 1.0 / np.cosh(np.clip(u, -350, 350)) ** 2
        diag = sech2[..., :, None] * np.eye(self.dim)
        return -self.P - self.alpha * diag

    def params(self):
        return {"P": self.P.tolist(), "alpha": self.alpha, "center": self.center.tolist()}


def preference_from_dict(d, dim):
    """Build a preference from its manifest entry, e.g. ``{"kind": "heinich", "Q": [[1]]}``."""
    if not isinstance(d, dict) or "kind" not in d:
        raise ValidationError(f"preference entry needs a 'kind': {d!r}")
    kind = d["kind"]
    extra = {k: v for k, v in d.items() if k != "kind"}
    if kind == "quadratic":
        return Quadratic(dim)
    if kind == "linear":
        return Linear(dim)
    if kind == "brenier":
        return Brenier(dim)
    if kind == "heinich":
        Q = extra.get("Q", np.eye(dim).tolist())
        pref = HeinichHead(Q)
        if pref.dim != dim:
            raise ValidationError("Q has the wrong size")
        return pref
    if kind == "concave_sum":
        return ConcaveSum(dim, P=extra.get("P"), alpha=extra.get("alpha", 0.5), center=extra.get("center"))
    raise ValidationError(f"unknown preference kind {kind!r}")
