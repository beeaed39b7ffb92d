"""Vector-valued maps with analytic first and second derivatives.

Every map takes a single flat input ``z`` (for stage functions this is
``[x; u]`` with ``u`` stacked over players) and returns an :class:`Eval`
holding the value, the Jacobian ``(nout, nin)`` and the per-output Hessians
``(nout, nin, nin)``.  Scalar costs are maps with ``nout == 1``.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np


class Eval(NamedTuple):
    value: np.ndarray
    jac: np.ndarray | None
    hess: np.ndarray | None


class Fn:
    """Base class.  Subclasses implement :meth:`evaluate`."""

    nin: int
    nout: int

    def evaluate(self, z: np.ndarray, order: int = 2) -> Eval:
        raise NotImplementedError

    def __call__(self, z, order: int = 2) -> Eval:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.nin,):
            raise ValueError(f"{type(self).__name__} expects input of length {self.nin}, got {z.shape}")
        out = self.evaluate(z, order)
        if not np.all(np.isfinite(out.value)):
            raise FloatingPointError(f"{type(self).__name__} produced a non-finite value")
        if order >= 2 and out.hess is not None:
            hess = 0.5 * (out.hess + np.swapaxes(out.hess, 1, 2))
            out = Eval(out.value, out.jac, hess)
        return out

    @property
    def is_linear(self) -> bool:
        return False


class Affine(Fn):
    """``z -> M z + c``."""

    def __init__(self, M, c=None):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.nout, self.nin = self.M.shape
        self.c = np.zeros(self.nout) if c is None else np.asarray(c, dtype=float).reshape(self.nout)

    def evaluate(self, z, order=2):
        jac = self.M if order >= 1 else None
        hess = np.zeros((self.nout, self.nin, self.nin)) if order >= 2 else None
        return Eval(self.M @ z + self.c, jac, hess)

    @property
    def is_linear(self):
        return True


def empty_map(nin: int) -> Affine:
    return Affine(np.zeros((0, nin)))


class Quadratic(Fn):
    """Scalar ``z -> 1/2 z'Wz + w'z + const``."""

    nout = 1

    def __init__(self, W, w=None, const: float = 0.0):
        self.W = np.asarray(W, dtype=float)
        self.W = 0.5 * (self.W + self.W.T)
        self.nin = self.W.shape[0]
        self.w = np.zeros(self.nin) if w is None else np.asarray(w, dtype=float).reshape(self.nin)
        self.const = float(const)

    def evaluate(self, z, order=2):
        Wz = self.W @ z
        val = np.array([0.5 * z @ Wz + self.w @ z + self.const])
        jac = (Wz + self.w)[None, :] if order >= 1 else None
        hess = self.W[None, :, :] if order >= 2 else None
        return Eval(val, jac, hess)


class Chain(Fn):
    """``z -> outer(inner(z))``."""

    def __init__(self, outer: Fn, inner: Fn):
        if outer.nin != inner.nout:
            raise ValueError("chain dimension mismatch")
        self.outer, self.inner = outer, inner
        self.nin, self.nout = inner.nin, outer.nout

    def evaluate(self, z, order=2):
        ei = self.inner(z, order)
        eo = self.outer(ei.value, order)
        jac = hess = None
        if order >= 1:
            jac = eo.jac @ ei.jac
        if order >= 2:
            hess = np.zeros((self.nout, self.nin, self.nin))
            if not self.outer.is_linear:
                hess += np.einsum("kab,ai,bj->kij", eo.hess, ei.jac, ei.jac, optimize=True)
            if not self.inner.is_linear:
                hess += np.einsum("ka,aij->kij", eo.jac, ei.hess, optimize=True)
        return Eval(eo.value, jac, hess)

    @property
    def is_linear(self):
        return self.outer.is_linear and self.inner.is_linear


class Concat(Fn):
    """Stack the outputs of several maps sharing one input."""

    def __init__(self, fns: Sequence[Fn]):
        self.fns = list(fns)
        self.nin = self.fns[0].nin
        if any(f.nin != self.nin for f in self.fns):
            raise ValueError("concat input mismatch")
        self.nout = sum(f.nout for f in self.fns)

    def evaluate(self, z, order=2):
        evs = [f(z, order) for f in self.fns]
        val = np.concatenate([e.value for e in evs])
        jac = np.vstack([e.jac for e in evs]) if order >= 1 else None
        hess = np.concatenate([e.hess for e in evs], axis=0) if order >= 2 else None
        return Eval(val, jac, hess)

    @property
    def is_linear(self):
        return all(f.is_linear for f in self.fns)


class Sum(Fn):
    """Elementwise sum of maps with equal shapes, each optionally weighted."""

    def __init__(self, fns: Sequence[Fn], weights: Sequence[float] | None = None):
        self.fns = list(fns)
        self.weights = [1.0] * len(self.fns) if weights is None else [float(w) for w in weights]
        self.nin, self.nout = self.fns[0].nin, self.fns[0].nout

    def evaluate(self, z, order=2):
        evs = [f(z, order) for f in self.fns]
        val = sum(w * e.value for w, e in zip(self.weights, evs))
        jac = sum(w * e.jac for w, e in zip(self.weights, evs)) if order >= 1 else None
        hess = sum(w * e.hess for w, e in zip(self.weights, evs)) if order >= 2 else None
        return Eval(val, jac, hess)

    @property
    def is_linear(self):
        return all(f.is_linear for f in self.fns)


class Unicycle(Fn):
    """Concatenated unicycle vehicles, state ``[px, py, v, heading]`` and
    control ``[accel, turn rate]`` per vehicle.  Input ``z = [x; u]``."""

    def __init__(self, vehicles: int, dt: float):
        self.V, self.dt = int(vehicles), float(dt)
        self.nout = 4 * self.V
        self.nin = 6 * self.V

    def evaluate(self, z, order=2):
        V, dt = self.V, self.dt
        n = 4 * V
        x, u = z[:n].reshape(V, 4), z[n:].reshape(V, 2)
        v, th = x[:, 2], x[:, 3]
        c, s = np.cos(th), np.sin(th)
        val = np.column_stack([
            x[:, 0] + dt * v * c,
            x[:, 1] + dt * v * s,
            v + dt * u[:, 0],
            th + dt * u[:, 1],
        ]).ravel()
        jac = hess = None
        if order >= 1:
            jac = np.zeros((n, self.nin))
            for k in range(V):
                r, ci = 4 * k, n + 2 * k
                jac[r:r + 4, r:r + 4] = np.eye(4)
                jac[r, r + 2] = dt * c[k]
                jac[r, r + 3] = -dt * v[k] * s[k]
                jac[r + 1, r + 2] = dt * s[k]
                jac[r + 1, r + 3] = dt * v[k] * c[k]
                jac[r + 2, ci] = dt
                jac[r + 3, ci + 1] = dt
        if order >= 2:
            hess = np.zeros((n, self.nin, self.nin))
            for k in range(V):
                r = 4 * k
                iv, ith = r + 2, r + 3
                hess[r, iv, ith] = hess[r, ith, iv] = -dt * s[k]
                hess[r, ith, ith] = -dt * v[k] * c[k]
                hess[r + 1, iv, ith] = hess[r + 1, ith, iv] = dt * c[k]
                hess[r + 1, ith, ith] = -dt * v[k] * s[k]
        return Eval(val, jac, hess)


class PairDistance(Fn):
    """``||z[a] - z[b]|| - offset`` for two index pairs ``a`` and ``b``."""

    nout = 1

    def __init__(self, nin: int, a: Sequence[int], b: Sequence[int], offset: float = 0.0):
        self.nin = int(nin)
        self.a, self.b = list(a), list(b)
        self.offset = float(offset)

    def evaluate(self, z, order=2):
        d = z[self.a] - z[self.b]
        r = float(np.linalg.norm(d))
        if r == 0.0:
            raise FloatingPointError("distance gradient undefined at coincident points")
        val = np.array([r - self.offset])
        jac = hess = None
        if order >= 1:
            g = d / r
            jac = np.zeros((1, self.nin))
            jac[0, self.a] += g
            jac[0, self.b] -= g
        if order >= 2:
            Hd = (np.eye(len(d)) - np.outer(d, d) / r**2) / r
            hess = np.zeros((1, self.nin, self.nin))
            idx = [(self.a, 1.0), (self.b, -1.0)]
            for p, sp in idx:
                for q, sq in idx:
                    hess[0][np.ix_(p, q)] += sp * sq * Hd
        return Eval(val, jac, hess)


def selector(nin: int, cols: Sequence[int]) -> Affine:
    """Linear map picking ``z[cols]``."""
    M = np.zeros((len(cols), nin))
    M[np.arange(len(cols)), list(cols)] = 1.0
    return Affine(M)
