"""Matrix Lie group kernels over real or complex scalars.

Supported kinds are SO(3), SE(2), SE(3), SE_2(3), the translation group R^n
and block-diagonal composites of any of these. Kernels for the simple kinds
accept arbitrary leading batch axes: a ``(..., n)`` array of tangent vectors
maps to a ``(..., m, m)`` array of matrices.

Nothing in this module takes a complex conjugate. Transposes are plain axis
swaps and vector norms are the analytic ``sqrt(sum(z**2))``, so every map stays
holomorphic in a neighbourhood of real arguments. The complex-step engine in
:mod:`lie_cstep.cstep` depends on that.

Tangent ordering
----------------
SE(2)   ``[phi, r1, r2]``
SE(3)   ``[phi (3), r (3)]``
SE_2(3) ``[phi (3), v (3), r (3)]``
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

SMALL_ANGLE = 1e-6
LOG_ANGLE_MARGIN = 1e-9
VEE_TOL = 1e-12


class LogDomainError(ValueError):
    """Raised when the logarithm is requested at (or beyond) a rotation of pi."""


# --------------------------------------------------------------------------
# Complexified scalar kit
# --------------------------------------------------------------------------

def ctranspose(A):
    """Swap the last two axes. Never conjugates."""
    return np.swapaxes(A, -1, -2)


def csqrt(z):
    """Principal square root; real input stays real."""
    return np.sqrt(z)


def cnorm(z, axis=-1):
    """Unconjugated norm ``sqrt(sum(z_i**2))``."""
    z = np.asarray(z)
    return csqrt(np.sum(z * z, axis=axis))


def cabs(z):
    """Absolute value decided on the real part, analytic in the imaginary one."""
    z = np.asarray(z)
    return np.where(np.real(z) < 0, -z, z)


def cmax(a, b):
    return np.where(np.real(a) >= np.real(b), a, b)


def cmin(a, b):
    return np.where(np.real(a) <= np.real(b), a, b)


def wrap_angle(z):
    """Shift ``z`` by a multiple of 2 pi so that its real part lies in (-pi, pi]."""
    z = np.asarray(z)
    r = np.real(z)
    wrapped = np.pi - np.mod(np.pi - r, 2.0 * np.pi)
    return z + (wrapped - r)


def complexified_atan2(y, x):
    """First-order analytic extension of ``atan2`` about real points.

    Returns ``atan2(Re y, Re x) + j (Re x Im y - Re y Im x) / (Re x^2 + Re y^2)``,
    which is exact to first order in the imaginary parts and real-valued on real
    inputs.
    """
    y = np.asarray(y)
    x = np.asarray(x)
    xr, yr = np.real(x), np.real(y)
    den = xr * xr + yr * yr
    if np.any(den == 0.0):
        raise ValueError("atan2 undefined: both real parts are zero")
    angle = np.arctan2(yr, xr)
    if not (np.iscomplexobj(x) or np.iscomplexobj(y)):
        return angle
    return angle + 1j * (xr * np.imag(y) - yr * np.imag(x)) / den


# --------------------------------------------------------------------------
# Sinc-family scalars as functions of x = phi**2
# --------------------------------------------------------------------------

def _series_or_closed(x, coeffs, closed):
    x = np.asarray(x)
    small = np.abs(np.real(csqrt(x))) < SMALL_ANGLE
    series = coeffs[0] + x * (coeffs[1] + x * (coeffs[2] + x * coeffs[3]))
    if np.all(small):
        return series
    safe = np.where(small, 1.0, x)
    with np.errstate(all="ignore"):
        big = closed(safe)
    return np.where(small, series, big)


def _sinc(x):
    """sin(phi)/phi."""
    def closed(x):
        phi = csqrt(x)
        return np.sin(phi) / phi
    return _series_or_closed(x, (1.0, -1.0 / 6.0, 1.0 / 120.0, -1.0 / 5040.0), closed)


def _cosc(x):
    """(1 - cos(phi))/phi**2, written as 2 sin(phi/2)**2 / phi**2 for accuracy."""
    def closed(x):
        s = np.sin(0.5 * csqrt(x))
        return 2.0 * s * s / x
    return _series_or_closed(x, (0.5, -1.0 / 24.0, 1.0 / 720.0, -1.0 / 40320.0), closed)


def _sinc3(x):
    """(phi - sin(phi))/phi**3."""
    def closed(x):
        phi = csqrt(x)
        return (phi - np.sin(phi)) / (phi * x)
    return _series_or_closed(x, (1.0 / 6.0, -1.0 / 120.0, 1.0 / 5040.0, -1.0 / 362880.0), closed)


def _half_cot(x):
    """(phi/2) cot(phi/2)."""
    def closed(x):
        half = 0.5 * csqrt(x)
        return half / np.tan(half)
    return _series_or_closed(x, (1.0, -1.0 / 12.0, -1.0 / 720.0, -1.0 / 30240.0), closed)


def _inv_jac_coeff(x):
    """(1 - (phi/2) cot(phi/2))/phi**2."""
    def closed(x):
        half = 0.5 * csqrt(x)
        return (1.0 - half / np.tan(half)) / x
    return _series_or_closed(x, (1.0 / 12.0, 1.0 / 720.0, 1.0 / 30240.0, 1.0 / 1209600.0), closed)


def _bcast(a):
    return np.asarray(a)[..., None, None]


def _matvec(A, v):
    return np.einsum("...ij,...j->...i", A, v)


def _dtype(*arrays):
    return np.result_type(*arrays, np.float64)


# --------------------------------------------------------------------------
# SO(3) building blocks
# --------------------------------------------------------------------------

def skew(phi):
    """``phi^x`` for ``(..., 3)`` input."""
    phi = np.asarray(phi)
    out = np.zeros(phi.shape[:-1] + (3, 3), dtype=_dtype(phi))
    out[..., 0, 1] = -phi[..., 2]
    out[..., 0, 2] = phi[..., 1]
    out[..., 1, 0] = phi[..., 2]
    out[..., 1, 2] = -phi[..., 0]
    out[..., 2, 0] = -phi[..., 1]
    out[..., 2, 1] = phi[..., 0]
    return out


def unskew(S):
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def so3_exp(phi):
    phi = np.asarray(phi)
    x = np.sum(phi * phi, axis=-1)
    W = skew(phi)
    return np.eye(3) + _bcast(_sinc(x)) * W + _bcast(_cosc(x)) * (W @ W)


def so3_left_jacobian(phi):
    phi = np.asarray(phi)
    x = np.sum(phi * phi, axis=-1)
    W = skew(phi)
    return np.eye(3) + _bcast(_cosc(x)) * W + _bcast(_sinc3(x)) * (W @ W)


def so3_inv_left_jacobian(phi):
    phi = np.asarray(phi)
    x = np.sum(phi * phi, axis=-1)
    W = skew(phi)
    return np.eye(3) - 0.5 * W + _bcast(_inv_jac_coeff(x)) * (W @ W)


def so3_log(C):
    """Rotation vector of ``C``; angle from acos of the trace, axis from the skew part."""
    C = np.asarray(C)
    s = 0.5 * unskew(C - ctranspose(C))
    c = 0.5 * (np.trace(C, axis1=-2, axis2=-1) - 1.0)
    if np.iscomplexobj(C):
        angle = np.arccos(c)
    else:
        angle = np.arccos(np.clip(c, -1.0, 1.0))
    if np.any(np.abs(np.real(angle)) > np.pi - LOG_ANGLE_MARGIN):
        raise LogDomainError("rotation angle too close to pi for a well-defined logarithm")
    small = np.abs(np.real(angle)) < SMALL_ANGLE
    sin_sq = np.sum(s * s, axis=-1)
    # asin(t)**2 series, t**2 = sin(phi)**2
    x_small = sin_sq * (1.0 + sin_sq * (1.0 / 3.0 + sin_sq * (8.0 / 45.0 + sin_sq * 4.0 / 35.0)))
    x = np.where(small, x_small, angle * angle)
    return s / np.asarray(_sinc(x))[..., None]


# --------------------------------------------------------------------------
# Group kinds
# --------------------------------------------------------------------------

class GroupKind:
    """A matrix Lie group: tangent dimension ``dof`` and matrix size ``dim``."""

    name = "?"
    dof = 0
    dim = 0

    def _key(self):
        return (self.name,)

    def __eq__(self, other):
        return isinstance(other, GroupKind) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return self.name

    def identity(self):
        return np.eye(self.dim)

    # kernels, overridden per kind
    def wedge(self, xi):
        raise NotImplementedError

    def vee(self, Xi):
        raise NotImplementedError

    def exp(self, xi):
        raise NotImplementedError

    def log(self, X):
        raise NotImplementedError

    def inverse(self, X):
        raise NotImplementedError

    def adjoint(self, X):
        raise NotImplementedError

    def odot(self, p):
        raise ValueError(f"odot is not defined for {self.name}")

    def compose(self, X, Y):
        return X @ Y

    def validate(self, X, tol=1e-9):
        """Return a list of human-readable invariant violations (empty if valid)."""
        raise NotImplementedError


def _rotation_problems(C, tol):
    problems = []
    if np.max(np.abs(ctranspose(C) @ C - np.eye(C.shape[-1]))) > tol:
        problems.append("rotation block is not orthonormal")
    det = np.linalg.det(C)
    if np.any(np.abs(det - 1.0) > tol):
        problems.append("rotation block determinant is not 1")
    return problems


class _SO3(GroupKind):
    name = "SO3"
    dof = 3
    dim = 3

    def wedge(self, xi):
        return skew(xi)

    def vee(self, Xi):
        return unskew(Xi)

    def exp(self, xi):
        return so3_exp(xi)

    def log(self, X):
        return so3_log(X)

    def inverse(self, X):
        return ctranspose(X)

    def adjoint(self, X):
        return np.array(X)

    def odot(self, p):
        return -skew(p)

    def validate(self, X, tol=1e-9):
        return _rotation_problems(np.real(X), tol)


class _SE2(GroupKind):
    name = "SE2"
    dof = 3
    dim = 3

    def wedge(self, xi):
        xi = np.asarray(xi)
        out = np.zeros(xi.shape[:-1] + (3, 3), dtype=_dtype(xi))
        out[..., 0, 1] = -xi[..., 0]
        out[..., 1, 0] = xi[..., 0]
        out[..., 0, 2] = xi[..., 1]
        out[..., 1, 2] = xi[..., 2]
        return out

    def vee(self, Xi):
        return np.stack([Xi[..., 1, 0], Xi[..., 0, 2], Xi[..., 1, 2]], axis=-1)

    def exp(self, xi):
        xi = np.asarray(xi)
        th = xi[..., 0]
        x = th * th
        a = _sinc(x)
        b = th * _cosc(x)
        c, s = np.cos(th), np.sin(th)
        out = np.zeros(xi.shape[:-1] + (3, 3), dtype=_dtype(xi))
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
        out[..., 0, 2] = a * xi[..., 1] - b * xi[..., 2]
        out[..., 1, 2] = b * xi[..., 1] + a * xi[..., 2]
        out[..., 2, 2] = 1.0
        return out

    def log(self, X):
        X = np.asarray(X)
        th = complexified_atan2(X[..., 1, 0], X[..., 0, 0])
        ct = _half_cot(th * th)
        r1, r2 = X[..., 0, 2], X[..., 1, 2]
        return np.stack(
            [th, ct * r1 + 0.5 * th * r2, -0.5 * th * r1 + ct * r2], axis=-1
        )

    def inverse(self, X):
        X = np.asarray(X)
        out = np.zeros_like(X)
        Ct = ctranspose(X[..., :2, :2])
        out[..., :2, :2] = Ct
        out[..., :2, 2] = -_matvec(Ct, X[..., :2, 2])
        out[..., 2, 2] = 1.0
        return out

    def adjoint(self, X):
        X = np.asarray(X)
        out = np.zeros(X.shape[:-2] + (3, 3), dtype=X.dtype)
        out[..., 0, 0] = 1.0
        out[..., 1, 0] = X[..., 1, 2]
        out[..., 2, 0] = -X[..., 0, 2]
        out[..., 1:, 1:] = X[..., :2, :2]
        return out

    def odot(self, p):
        p = np.asarray(p)
        out = np.zeros(p.shape[:-1] + (3, 3), dtype=_dtype(p))
        out[..., 0, 0] = -p[..., 1]
        out[..., 1, 0] = p[..., 0]
        out[..., 0, 1] = p[..., 2]
        out[..., 1, 2] = p[..., 2]
        return out

    def validate(self, X, tol=1e-9):
        X = np.real(np.asarray(X))
        problems = _rotation_problems(X[:2, :2], tol)
        if np.max(np.abs(X[2] - [0.0, 0.0, 1.0])) > tol:
            problems.append("bottom row is not [0 0 1]")
        return problems


class _SE3(GroupKind):
    name = "SE3"
    dof = 6
    dim = 4

    def wedge(self, xi):
        xi = np.asarray(xi)
        out = np.zeros(xi.shape[:-1] + (4, 4), dtype=_dtype(xi))
        out[..., :3, :3] = skew(xi[..., :3])
        out[..., :3, 3] = xi[..., 3:]
        return out

    def vee(self, Xi):
        return np.concatenate([unskew(Xi[..., :3, :3]), Xi[..., :3, 3]], axis=-1)

    def exp(self, xi):
        xi = np.asarray(xi)
        phi = xi[..., :3]
        out = np.zeros(xi.shape[:-1] + (4, 4), dtype=_dtype(xi))
        out[..., :3, :3] = so3_exp(phi)
        out[..., :3, 3] = _matvec(so3_left_jacobian(phi), xi[..., 3:])
        out[..., 3, 3] = 1.0
        return out

    def log(self, X):
        X = np.asarray(X)
        phi = so3_log(X[..., :3, :3])
        rho = _matvec(so3_inv_left_jacobian(phi), X[..., :3, 3])
        return np.concatenate([phi, rho], axis=-1)

    def inverse(self, X):
        X = np.asarray(X)
        out = np.zeros_like(X)
        Ct = ctranspose(X[..., :3, :3])
        out[..., :3, :3] = Ct
        out[..., :3, 3] = -_matvec(Ct, X[..., :3, 3])
        out[..., 3, 3] = 1.0
        return out

    def adjoint(self, X):
        X = np.asarray(X)
        C = X[..., :3, :3]
        out = np.zeros(X.shape[:-2] + (6, 6), dtype=X.dtype)
        out[..., :3, :3] = C
        out[..., 3:, 3:] = C
        out[..., 3:, :3] = skew(X[..., :3, 3]) @ C
        return out

    def odot(self, p):
        p = np.asarray(p)
        out = np.zeros(p.shape[:-1] + (4, 6), dtype=_dtype(p))
        out[..., :3, :3] = -skew(p[..., :3])
        out[..., :3, 3:] = p[..., 3, None, None] * np.eye(3)
        return out

    def validate(self, X, tol=1e-9):
        X = np.real(np.asarray(X))
        problems = _rotation_problems(X[:3, :3], tol)
        if np.max(np.abs(X[3] - [0.0, 0.0, 0.0, 1.0])) > tol:
            problems.append("bottom row is not [0 0 0 1]")
        return problems


class _SE23(GroupKind):
    name = "SE23"
    dof = 9
    dim = 5

    def wedge(self, xi):
        xi = np.asarray(xi)
        out = np.zeros(xi.shape[:-1] + (5, 5), dtype=_dtype(xi))
        out[..., :3, :3] = skew(xi[..., :3])
        out[..., :3, 3] = xi[..., 3:6]
        out[..., :3, 4] = xi[..., 6:9]
        return out

    def vee(self, Xi):
        return np.concatenate(
            [unskew(Xi[..., :3, :3]), Xi[..., :3, 3], Xi[..., :3, 4]], axis=-1
        )

    def exp(self, xi):
        xi = np.asarray(xi)
        phi = xi[..., :3]
        J = so3_left_jacobian(phi)
        out = np.zeros(xi.shape[:-1] + (5, 5), dtype=_dtype(xi))
        out[..., :3, :3] = so3_exp(phi)
        out[..., :3, 3] = _matvec(J, xi[..., 3:6])
        out[..., :3, 4] = _matvec(J, xi[..., 6:9])
        out[..., 3, 3] = 1.0
        out[..., 4, 4] = 1.0
        return out

    def log(self, X):
        X = np.asarray(X)
        phi = so3_log(X[..., :3, :3])
        Jinv = so3_inv_left_jacobian(phi)
        return np.concatenate(
            [phi, _matvec(Jinv, X[..., :3, 3]), _matvec(Jinv, X[..., :3, 4])], axis=-1
        )

    def inverse(self, X):
        X = np.asarray(X)
        out = np.zeros_like(X)
        Ct = ctranspose(X[..., :3, :3])
        out[..., :3, :3] = Ct
        out[..., :3, 3] = -_matvec(Ct, X[..., :3, 3])
        out[..., :3, 4] = -_matvec(Ct, X[..., :3, 4])
        out[..., 3, 3] = 1.0
        out[..., 4, 4] = 1.0
        return out

    def adjoint(self, X):
        X = np.asarray(X)
        C = X[..., :3, :3]
        out = np.zeros(X.shape[:-2] + (9, 9), dtype=X.dtype)
        for i in range(3):
            out[..., 3 * i:3 * i + 3, 3 * i:3 * i + 3] = C
        out[..., 3:6, :3] = skew(X[..., :3, 3]) @ C
        out[..., 6:9, :3] = skew(X[..., :3, 4]) @ C
        return out

    def odot(self, p):
        p = np.asarray(p)
        out = np.zeros(p.shape[:-1] + (5, 9), dtype=_dtype(p))
        out[..., :3, :3] = -skew(p[..., :3])
        out[..., :3, 3:6] = p[..., 3, None, None] * np.eye(3)
        out[..., :3, 6:9] = p[..., 4, None, None] * np.eye(3)
        return out

    def validate(self, X, tol=1e-9):
        X = np.real(np.asarray(X))
        problems = _rotation_problems(X[:3, :3], tol)
        if np.max(np.abs(X[3:] - [[0, 0, 0, 1, 0], [0, 0, 0, 0, 1]])) > tol:
            problems.append("bottom rows are not [0 0 0 1 0; 0 0 0 0 1]")
        return problems


class Rn(GroupKind):
    """Translation group R^n embedded as ``[[1, x], [0, 1]]``."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("Rn needs n >= 1")
        self.n = n
        self.name = f"R{n}"
        self.dof = n
        self.dim = n + 1

    def _key(self):
        return ("Rn", self.n)

    def wedge(self, xi):
        xi = np.asarray(xi)
        out = np.zeros(xi.shape[:-1] + (self.dim, self.dim), dtype=_dtype(xi))
        out[..., : self.n, self.n] = xi
        return out

    def vee(self, Xi):
        return np.array(Xi[..., : self.n, self.n])

    def exp(self, xi):
        return np.eye(self.dim) + self.wedge(xi)

    def log(self, X):
        return self.vee(X)

    def inverse(self, X):
        return np.eye(self.dim) - self.wedge(self.vee(X))

    def adjoint(self, X):
        X = np.asarray(X)
        return np.broadcast_to(np.eye(self.n), X.shape[:-2] + (self.n, self.n)).copy()

    def odot(self, p):
        p = np.asarray(p)
        out = np.zeros(p.shape[:-1] + (self.dim, self.n), dtype=_dtype(p))
        out[..., : self.n, :] = p[..., self.n, None, None] * np.eye(self.n)
        return out

    def validate(self, X, tol=1e-9):
        X = np.real(np.asarray(X))
        ref = np.eye(self.dim)
        ref[: self.n, self.n] = X[: self.n, self.n]
        return [] if np.max(np.abs(X - ref)) <= tol else ["not a translation matrix"]


class Composite(GroupKind):
    """Block-diagonal product of groups; tangent vectors are concatenations."""

    def __init__(self, kinds: Sequence[GroupKind]):
        kinds = tuple(kinds)
        if not kinds:
            raise ValueError("Composite needs at least one inner kind")
        self.kinds = kinds
        self.dof = sum(k.dof for k in kinds)
        self.dim = sum(k.dim for k in kinds)
        self.dof_offsets = np.concatenate([[0], np.cumsum([k.dof for k in kinds])])
        self.dim_offsets = np.concatenate([[0], np.cumsum([k.dim for k in kinds])])
        if len(set(kinds)) == 1:
            self.name = f"Composite[{kinds[0].name}x{len(kinds)}]"
        else:
            self.name = "Composite[" + ",".join(k.name for k in kinds) + "]"

    def _key(self):
        return ("Composite",) + tuple(k._key() for k in self.kinds)

    def blocks(self, X):
        d = self.dim_offsets
        return [X[..., d[i]:d[i + 1], d[i]:d[i + 1]] for i in range(len(self.kinds))]

    def segments(self, xi):
        o = self.dof_offsets
        return [xi[..., o[i]:o[i + 1]] for i in range(len(self.kinds))]

    def _assemble(self, mats, rows=None, cols=None):
        rows = self.dim_offsets if rows is None else rows
        cols = self.dim_offsets if cols is None else cols
        dtype = _dtype(*mats)
        out = np.zeros((rows[-1], cols[-1]), dtype=dtype)
        for i, M in enumerate(mats):
            out[rows[i]:rows[i + 1], cols[i]:cols[i + 1]] = M
        return out

    def wedge(self, xi):
        xi = np.asarray(xi)
        return self._assemble([k.wedge(s) for k, s in zip(self.kinds, self.segments(xi))])

    def vee(self, Xi):
        return np.concatenate([k.vee(B) for k, B in zip(self.kinds, self.blocks(Xi))])

    def exp(self, xi):
        xi = np.asarray(xi)
        return self._assemble([k.exp(s) for k, s in zip(self.kinds, self.segments(xi))])

    def log(self, X):
        return np.concatenate([k.log(B) for k, B in zip(self.kinds, self.blocks(X))])

    def inverse(self, X):
        return self._assemble([k.inverse(B) for k, B in zip(self.kinds, self.blocks(X))])

    def adjoint(self, X):
        return self._assemble(
            [k.adjoint(B) for k, B in zip(self.kinds, self.blocks(X))],
            self.dof_offsets,
            self.dof_offsets,
        )

    def odot(self, p):
        p = np.asarray(p)
        mats = [k.odot(p[self.dim_offsets[i]:self.dim_offsets[i + 1]])
                for i, k in enumerate(self.kinds)]
        return self._assemble(mats, self.dim_offsets, self.dof_offsets)

    def compose(self, X, Y):
        return self._assemble([A @ B for A, B in zip(self.blocks(X), self.blocks(Y))])

    def validate(self, X, tol=1e-9):
        X = np.real(np.asarray(X))
        problems = []
        mask = self._assemble([np.ones((k.dim, k.dim)) for k in self.kinds]).astype(bool)
        if np.max(np.abs(X[~mask]), initial=0.0) > tol:
            problems.append("off-block entries are nonzero")
        for i, (k, B) in enumerate(zip(self.kinds, self.blocks(X))):
            problems.extend(f"block {i}: {p}" for p in k.validate(B, tol))
        return problems


SO3 = _SO3()
SE2 = _SE2()
SE3 = _SE3()
SE23 = _SE23()

KINDS = {"SO3": SO3, "SE2": SE2, "SE3": SE3, "SE23": SE23}


# --------------------------------------------------------------------------
# Elements and the public operations
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GroupElement:
    """An ``m x m`` matrix tagged with its group kind. Entries may be complex."""

    kind: GroupKind
    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix)
        if M.shape != (self.kind.dim, self.kind.dim):
            raise ValueError(
                f"{self.kind.name} expects a {self.kind.dim}x{self.kind.dim} matrix, got {M.shape}"
            )
        object.__setattr__(self, "matrix", M)

    @classmethod
    def identity(cls, kind: GroupKind) -> "GroupElement":
        return cls(kind, kind.identity())

    @classmethod
    def from_matrix(cls, kind: GroupKind, matrix, tol: float = 1e-9) -> "GroupElement":
        """Construct with invariant checks (real matrices only)."""
        X = cls(kind, np.asarray(matrix, dtype=float))
        problems = kind.validate(X.matrix, tol)
        if problems:
            raise ValueError(f"invalid {kind.name} element: " + "; ".join(problems))
        return X

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.matrix) or not np.any(np.imag(self.matrix))

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        if other.kind != self.kind:
            raise ValueError(f"cannot compose {self.kind} with {other.kind}")
        return GroupElement(self.kind, self.kind.compose(self.matrix, other.matrix))

    def inverse(self) -> "GroupElement":
        return GroupElement(self.kind, self.kind.inverse(self.matrix))

    def log(self) -> np.ndarray:
        return self.kind.log(self.matrix)

    def adjoint(self) -> np.ndarray:
        return self.kind.adjoint(self.matrix)

    def real(self) -> "GroupElement":
        return GroupElement(self.kind, np.real(self.matrix))

    def validate(self, tol: float = 1e-9) -> list[str]:
        return self.kind.validate(self.matrix, tol)

    def __repr__(self):
        return f"GroupElement({self.kind.name},\n{self.matrix})"


def _check_dof(xi, kind):
    xi = np.asarray(xi)
    if xi.shape[-1:] != (kind.dof,):
        raise ValueError(f"{kind.name} tangent vectors have {kind.dof} entries, got shape {xi.shape}")
    return xi


def wedge(xi, kind: GroupKind) -> np.ndarray:
    """Lie algebra matrix of ``xi``; composites give the block-diagonal layout."""
    return kind.wedge(_check_dof(xi, kind))


def vee(Xi, kind: GroupKind) -> np.ndarray:
    """Inverse of :func:`wedge`; rejects matrices off the algebra pattern."""
    Xi = np.asarray(Xi)
    if Xi.shape[-2:] != (kind.dim, kind.dim):
        raise ValueError(f"{kind.name} algebra matrices are {kind.dim}x{kind.dim}, got {Xi.shape}")
    xi = kind.vee(Xi)
    off = np.max(np.abs(kind.wedge(xi) - Xi), initial=0.0)
    if off > VEE_TOL:
        raise ValueError(f"matrix is not in the {kind.name} algebra (off-pattern {off:.3g})")
    return xi


def exp_map(xi, kind: GroupKind) -> GroupElement:
    xi = _check_dof(xi, kind)
    if xi.ndim != 1:
        raise ValueError("exp_map takes a single tangent vector; use kind.exp for batches")
    return GroupElement(kind, kind.exp(xi))


def log_map(X: GroupElement) -> np.ndarray:
    return X.kind.log(X.matrix)


def inverse(X: GroupElement) -> GroupElement:
    return X.inverse()


def adjoint(X: GroupElement) -> np.ndarray:
    return X.kind.adjoint(X.matrix)


def odot(p, kind: GroupKind) -> np.ndarray:
    """``p^odot`` such that ``wedge(x) @ p == odot(p) @ x``."""
    p = np.asarray(p)
    if p.shape[-1:] != (kind.dim,):
        raise ValueError(f"{kind.name} odot needs a length-{kind.dim} point, got {p.shape}")
    return kind.odot(p)


def compose(X: GroupElement, Y: GroupElement) -> GroupElement:
    return X @ Y


def composite_pack(elements: Sequence[GroupElement]) -> GroupElement:
    """Package elements as ``diag(X_0, ..., X_K)``."""
    elements = list(elements)
    if not elements:
        raise ValueError("cannot pack an empty list of elements")
    kind = Composite([X.kind for X in elements])
    return GroupElement(kind, block_diag(*[X.matrix for X in elements]))


def composite_unpack(X: GroupElement) -> list[GroupElement]:
    if not isinstance(X.kind, Composite):
        raise ValueError(f"{X.kind.name} is not a composite kind")
    return [GroupElement(k, np.array(B)) for k, B in zip(X.kind.kinds, X.kind.blocks(X.matrix))]


def random_tangent(kind: GroupKind, rng: np.random.Generator, max_angle: float = np.pi - 0.1,
                   scale: float = 1.0) -> np.ndarray:
    """Random tangent vector whose rotation part stays below ``max_angle``."""
    if isinstance(kind, Composite):
        return np.concatenate([random_tangent(k, rng, max_angle, scale) for k in kind.kinds])
    xi = scale * rng.standard_normal(kind.dof)
    if kind in (SO3, SE3, SE23):
        phi = xi[:3]
        n = np.linalg.norm(phi)
        if n > max_angle:
            xi[:3] = phi * (max_angle * rng.uniform()) / n
    elif kind == SE2:
        xi[0] = np.clip(xi[0], -max_angle, max_angle)
    return xi


def random_element(kind: GroupKind, rng: np.random.Generator, scale: float = 1.0) -> GroupElement:
    return exp_map(random_tangent(kind, rng, scale=scale), kind)
