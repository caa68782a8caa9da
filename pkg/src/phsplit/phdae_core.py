"""Linear constant-coefficient port-Hamiltonian DAEs.

A system is stored as the matrix tuple (E, J, R, Q, B, P, S, N) together with
an input signal u(t):

    E x' = (J - R) Q x + (B - P) u
       y = (B + P)^T Q x + (S + N) u

with Hamiltonian H(x) = 1/2 x^T Q^T E x.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TextIO, Union
import io
import os

import numpy as np


class StructuralError(ValueError):
    """Matrices have inconsistent shapes."""


class InvalidSystemError(ValueError):
    """The system violates a standing assumption (e.g. singular Q)."""


class InsufficientDataError(ValueError):
    """Not enough samples for a finite-difference evaluation."""


# --------------------------------------------------------------------------
# input signals


class ZeroInput:
    """u(t) = 0 with m components."""

    def __init__(self, m: int):
        self.m = int(m)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + (self.m,))

    def __repr__(self):
        return f"ZeroInput(m={self.m})"


class SinusoidalInput:
    """Sum of sinusoids, u(t) = sum_k a_k sin(w_k t + p_k).

    ``amplitudes`` has shape (K, m); ``omegas`` and ``phases`` have length K.
    Accepts scalar or array time and returns shape ``t.shape + (m,)``.
    Exact references for linear benchmarks rely on this closed form.
    """

    def __init__(self, amplitudes, omegas, phases=None):
        a = np.atleast_2d(np.asarray(amplitudes, dtype=float))
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        p = np.zeros_like(w) if phases is None else np.atleast_1d(np.asarray(phases, dtype=float))
        if a.shape[0] != w.size or p.size != w.size:
            raise StructuralError("amplitudes, omegas and phases disagree in length")
        self.amplitudes = a
        self.omegas = w
        self.phases = p
        self.m = a.shape[1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        s = np.sin(np.multiply.outer(t, self.omegas) + self.phases)
        return s @ self.amplitudes

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        c = np.cos(np.multiply.outer(t, self.omegas) + self.phases)
        return (c * self.omegas) @ self.amplitudes

    def __repr__(self):
        return f"SinusoidalInput(omegas={self.omegas.tolist()}, m={self.m})"


InputFn = Callable[[float], np.ndarray]


def _as_matrix(M, shape, name):
    A = np.array(M, dtype=float)
    if A.ndim == 1 and shape[1] == 1 and A.shape[0] == shape[0]:
        A = A.reshape(shape)
    if A.size == 0 and 0 in shape:
        A = A.reshape(shape)
    if A.shape != shape:
        raise StructuralError(f"{name} has shape {A.shape}, expected {shape}")
    A.setflags(write=False)
    return A


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class PHDAESystem:
    """Linear pH-DAE; see the module docstring for the equations.

    Missing Q defaults to the identity, missing P, S, N to zero, missing
    input to zero and missing x0 to the zero state.
    """

    E: np.ndarray
    J: np.ndarray
    R: np.ndarray
    B: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None
    N: Optional[np.ndarray] = None
    input: Optional[InputFn] = None
    x0: Optional[np.ndarray] = None
    names: Optional[Sequence[str]] = None

    def __post_init__(self):
        E = np.array(self.E, dtype=float)
        if E.ndim != 2 or E.shape[0] != E.shape[1]:
            raise StructuralError(f"E must be square, got shape {E.shape}")
        n = E.shape[0]
        if self.B is None:
            B = np.zeros((n, 0))
        else:
            B = np.array(self.B, dtype=float)
            if B.ndim == 1:
                B = B.reshape(n, 1) if B.size == n else B
            if B.ndim != 2 or B.shape[0] != n:
                raise StructuralError(f"B has shape {B.shape}, expected ({n}, m)")
        m = B.shape[1]
        set_ = object.__setattr__
        set_(self, "E", _as_matrix(E, (n, n), "E"))
        set_(self, "J", _as_matrix(self.J, (n, n), "J"))
        set_(self, "R", _as_matrix(self.R, (n, n), "R"))
        set_(self, "B", _as_matrix(B, (n, m), "B"))
        set_(self, "Q", _as_matrix(np.eye(n) if self.Q is None else self.Q, (n, n), "Q"))
        set_(self, "P", _as_matrix(np.zeros((n, m)) if self.P is None else self.P, (n, m), "P"))
        set_(self, "S", _as_matrix(np.zeros((m, m)) if self.S is None else self.S, (m, m), "S"))
        set_(self, "N", _as_matrix(np.zeros((m, m)) if self.N is None else self.N, (m, m), "N"))
        if self.input is None:
            set_(self, "input", ZeroInput(m))
        x0 = np.zeros(n) if self.x0 is None else np.array(self.x0, dtype=float).reshape(-1)
        if x0.shape != (n,):
            raise StructuralError(f"x0 has length {x0.size}, expected {n}")
        x0.setflags(write=False)
        set_(self, "x0", x0)
        if self.names is not None:
            if len(self.names) != n:
                raise StructuralError("names must have one entry per state")
            set_(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def W(self) -> np.ndarray:
        """Passivity matrix [[Q^T R Q, Q^T P], [P^T Q, S]]."""
        Q = self.Q
        top = np.hstack([Q.T @ self.R @ Q, Q.T @ self.P])
        bot = np.hstack([self.P.T @ Q, self.S])
        return np.vstack([top, bot])

    def u(self, t) -> np.ndarray:
        return np.asarray(self.input(t), dtype=float)

    def output(self, x, u) -> np.ndarray:
        """Port output y for state(s) x and input(s) u (last axis is the vector axis)."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        C = (self.B + self.P).T @ self.Q
        return x @ C.T + u @ (self.S + self.N).T

    def normalized(self) -> "PHDAESystem":
        """Equivalent system with Q = I, obtained by multiplying with Q^T from the left."""
        Q = self.Q
        if np.array_equal(Q, np.eye(self.n)):
            return self
        return PHDAESystem(
            E=Q.T @ self.E, J=Q.T @ self.J @ Q, R=Q.T @ self.R @ Q,
            B=Q.T @ self.B, P=Q.T @ self.P, S=self.S, N=self.N,
            input=self.input, x0=self.x0, names=self.names,
        )

    def with_input(self, input: InputFn) -> "PHDAESystem":
        return PHDAESystem(self.E, self.J, self.R, self.B, self.Q, self.P, self.S,
                           self.N, input, self.x0, self.names)


@dataclass(frozen=True)
class SemiExplicitPHDAE:
    """System in the coordinates xbar = T x where Ebar = diag(I_r, 0)."""

    r: int
    E: np.ndarray
    J: np.ndarray
    R: np.ndarray
    B: np.ndarray
    P: np.ndarray
    T: np.ndarray
    Tinv: np.ndarray
    S: np.ndarray
    N: np.ndarray
    input: InputFn

    @property
    def n(self) -> int:
        return self.E.shape[0]

    def to_original(self, xbar) -> np.ndarray:
        return np.asarray(xbar) @ self.Tinv.T

    def from_original(self, x) -> np.ndarray:
        return np.asarray(x) @ self.T.T

    def as_system(self) -> PHDAESystem:
        return PHDAESystem(E=self.E, J=self.J, R=self.R, B=self.B, P=self.P,
                           S=self.S, N=self.N, input=self.input)


@dataclass(frozen=True)
class KernelProjector:
    K: np.ndarray
    P: np.ndarray
    rank_tolerance: float

    @property
    def rank_deficiency(self) -> int:
        return int(round(np.trace(self.K)))


@dataclass(frozen=True)
class Condition:
    name: str
    residual: float
    tolerance: float

    @property
    def satisfied(self) -> bool:
        return bool(self.residual <= self.tolerance)


@dataclass(frozen=True)
class ValidationReport:
    conditions: tuple
    min_eig_QtE: float
    min_eig_W: float

    @property
    def ok(self) -> bool:
        return all(c.satisfied for c in self.conditions)

    def violated(self):
        return [c.name for c in self.conditions if not c.satisfied]

    def __getitem__(self, name) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self):
        lines = [f"{'ok' if c.satisfied else 'VIOLATED':8s} {c.name:22s} residual={c.residual:.3e}"
                 for c in self.conditions]
        lines.append(f"min eig Q^T E = {self.min_eig_QtE:.3e}, min eig W = {self.min_eig_W:.3e}")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# operations


def _scale(*mats) -> float:
    s = max((np.linalg.norm(M, 2) for M in mats if M.size), default=0.0)
    return s if s > 0 else 1.0


def _min_eig_sym(M) -> float:
    if M.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


def validate(sys: PHDAESystem, tol: float = 1e-10) -> ValidationReport:
    """Check the defining structural conditions and report residuals.

    Residuals are relative to the norm of the matrices involved; a condition
    counts as satisfied when its residual is at most ``tol``.
    """
    Q = sys.Q
    conds = []
    sv = np.linalg.svd(Q, compute_uv=False)
    # reciprocal condition number below tol means numerically singular
    q_res = 0.0 if sv[-1] > tol * sv[0] else 1.0
    conds.append(Condition("Q nonsingular", q_res, tol))

    QJQ = Q.T @ sys.J @ Q
    conds.append(Condition("QtJQ skew", float(np.linalg.norm(QJQ + QJQ.T, 2) / _scale(QJQ)), tol))

    QE = Q.T @ sys.E
    conds.append(Condition("QtE symmetric", float(np.linalg.norm(QE - QE.T, 2) / _scale(QE)), tol))
    mE = _min_eig_sym(QE)
    conds.append(Condition("QtE psd", max(0.0, -mE) / _scale(QE), tol))

    W = sys.W
    conds.append(Condition("W symmetric", float(np.linalg.norm(W - W.T, 2) / _scale(W)), tol))
    mW = _min_eig_sym(W)
    conds.append(Condition("W psd", max(0.0, -mW) / _scale(W), tol))

    if sys.m:
        conds.append(Condition("N skew", float(np.linalg.norm(sys.N + sys.N.T, 2) / _scale(sys.N)), tol))
    return ValidationReport(tuple(conds), mE, mW)


def hamiltonian(sys: PHDAESystem, x) -> np.ndarray:
    """H(x) = 1/2 x^T Q^T E x; vectorized over leading axes of x."""
    x = np.asarray(x, dtype=float)
    M = sys.Q.T @ sys.E
    return 0.5 * np.einsum("...i,ij,...j->...", x, M, x)


def energy_norm(E, x) -> np.ndarray:
    """sqrt(x^T E x) for symmetric psd E, computed through a square-root factor.

    Going through a factor avoids the cancellation of the plain quadratic
    form when E has large off-diagonal entries.
    """
    F = _psd_factor(np.asarray(E, dtype=float))
    return np.linalg.norm(np.asarray(x) @ F.T, axis=-1)


_factor_cache: dict = {}


def _psd_factor(E: np.ndarray) -> np.ndarray:
    key = (E.shape, E.tobytes())
    F = _factor_cache.get(key)
    if F is None:
        if np.count_nonzero(E - np.diag(np.diag(E))) == 0:
            F = np.diag(np.sqrt(np.clip(np.diag(E), 0.0, None)))
        else:
            w, V = np.linalg.eigh(0.5 * (E + E.T))
            # eigenvalues at round-off level belong to the kernel
            cut = E.shape[0] * np.finfo(float).eps * max(np.abs(w).max(), 0.0)
            F = (V * np.sqrt(np.where(w > cut, w, 0.0))).T
        if len(_factor_cache) > 256:
            _factor_cache.clear()
        _factor_cache[key] = F
    return F


def _is_diagonal(M) -> bool:
    return np.count_nonzero(M - np.diag(np.diag(M))) == 0


def kernel_projector(E, rank_tolerance: float = 1e-10) -> KernelProjector:
    """Orthogonal projector K_E onto ker(E).

    Singular values at or below ``rank_tolerance * sigma_max`` count as zero.
    Diagonal E gives the exact 0/1 indicator of its zero entries.
    """
    E = np.asarray(E, dtype=float)
    n = E.shape[0]
    if E.ndim != 2 or E.shape[1] != n:
        raise StructuralError("E must be square")
    if _is_diagonal(E):
        d = np.abs(np.diag(E))
        cut = rank_tolerance * d.max() if d.size and d.max() > 0 else 0.0
        K = np.diag((d <= cut).astype(float))
    else:
        U, s, Vt = np.linalg.svd(E)
        cut = rank_tolerance * s[0] if s[0] > 0 else 0.0
        null = Vt[s <= cut]
        K = null.T @ null
    K.setflags(write=False)
    P = np.eye(n) - K
    P.setflags(write=False)
    return KernelProjector(K, P, rank_tolerance)


def numerical_rank(M, rank_tolerance: float = 1e-10) -> int:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rank_tolerance * s[0]))


def pencil_regular(E, A, rank_tolerance: float = 1e-10) -> bool:
    """True iff ker(E) and ker(A) intersect trivially (rank test on [E; A])."""
    E = np.asarray(E, dtype=float)
    A = np.asarray(A, dtype=float)
    if E.shape != A.shape:
        raise StructuralError("E and A must have the same shape")
    n = E.shape[1]
    # regularity does not depend on the relative scale of E and A
    nE, nA = np.abs(E).max(initial=0.0), np.abs(A).max(initial=0.0)
    En = E / nE if nE > 0 else E
    An = A / nA if nA > 0 else A
    return numerical_rank(np.vstack([En, An]), rank_tolerance) == n


def to_semi_explicit(sys: PHDAESystem, rank_tolerance: float = 1e-10) -> SemiExplicitPHDAE:
    """Transform to xbar = T x with T = Dt^{1/2} V where Q^T E = V^T D V.

    Positive eigenvalues come first, so Ebar = diag(I_r, 0). Dt holds the
    positive eigenvalues and ones in place of the zero ones.
    """
    Q = sys.Q
    sv = np.linalg.svd(Q, compute_uv=False)
    if sv[-1] <= rank_tolerance * sv[0]:
        raise InvalidSystemError("Q is singular")
    QE = Q.T @ sys.E
    QE = 0.5 * (QE + QE.T)
    n = sys.n
    if _is_diagonal(QE):
        d = np.diag(QE).copy()
        cut = rank_tolerance * max(np.abs(d).max(), 0.0) if n else 0.0
        pos = d > cut
        order = np.concatenate([np.flatnonzero(pos), np.flatnonzero(~pos)])
        V = np.eye(n)[order]
        w = d[order]
    else:
        w, Vc = np.linalg.eigh(QE)
        order = np.argsort(-w, kind="stable")
        w = w[order]
        Vc = Vc[:, order]
        # deterministic sign: largest entry of each eigenvector positive
        idx = np.argmax(np.abs(Vc), axis=0)
        Vc = Vc * np.sign(Vc[idx, np.arange(n)])
        V = Vc.T
        cut = rank_tolerance * max(w.max(), 0.0) if n else 0.0
        pos = w > cut
    r = int(np.sum(w > cut))
    if np.any(w < -cut):
        raise InvalidSystemError("Q^T E is not positive semi-definite")
    dt = np.ones(n)
    dt[:r] = w[:r]
    T = np.sqrt(dt)[:, None] * V
    Tinv = V.T / np.sqrt(dt)[None, :]
    L = Tinv.T  # = Dt^{-1/2} V
    Ebar = np.zeros((n, n))
    Ebar[np.arange(r), np.arange(r)] = 1.0
    Jbar = L @ (Q.T @ sys.J @ Q) @ Tinv
    Rbar = L @ (Q.T @ sys.R @ Q) @ Tinv
    Bbar = L @ (Q.T @ sys.B)
    Pbar = L @ (Q.T @ sys.P)
    return SemiExplicitPHDAE(r=r, E=Ebar, J=Jbar, R=Rbar, B=Bbar, P=Pbar, T=T,
                             Tinv=Tinv, S=sys.S, N=sys.N, input=sys.input)


def index1_check(semi: SemiExplicitPHDAE, rank_tolerance: float = 1e-10) -> bool:
    """True iff the algebraic block of (Jbar - Rbar) is nonsingular."""
    n, r = semi.n, semi.r
    if r == n:
        return True
    A = semi.J - semi.R
    A22 = A[r:, r:]
    s = np.linalg.svd(A22, compute_uv=False)
    scale = max(np.linalg.norm(A, 2), 1e-300)
    return bool(s[-1] > rank_tolerance * scale)


def dissipation_residual(sys: PHDAESystem, times, states, outputs=None, inputs=None):
    """Pointwise residual dH/dt - u^T y + (x,u)^T W (x,u) along a sampled trajectory.

    dH/dt uses centered differences, so the result lives on the interior
    samples. Returns ``(t_interior, residual)``. Inputs and outputs default to
    the system's input function and output map.
    """
    t = np.asarray(times, dtype=float)
    X = np.asarray(states, dtype=float)
    if t.size < 3 or X.shape[0] < 3:
        raise InsufficientDataError("need at least 3 samples for centered differences")
    if X.shape[0] != t.size:
        raise StructuralError("times and states disagree in length")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
        raise ValueError("trajectory must be sampled on a uniform grid")
    U = sys.u(t) if inputs is None else np.asarray(inputs, dtype=float).reshape(t.size, sys.m)
    Y = sys.output(X, U) if outputs is None else np.asarray(outputs, dtype=float).reshape(t.size, sys.m)
    H = hamiltonian(sys, X)
    dH = (H[2:] - H[:-2]) / (t[2:] - t[:-2])
    Xi, Ui, Yi = X[1:-1], U[1:-1], Y[1:-1]
    Z = np.hstack([Xi, Ui])
    quad = np.einsum("ki,ij,kj->k", Z, sys.W, Z)
    supply = np.einsum("ki,ki->k", Ui, Yi)
    return t[1:-1], dH - supply + quad


# --------------------------------------------------------------------------
# plain-text matrix format: header "rows cols", then rows of values


def write_matrix(target: Union[str, os.PathLike, TextIO], M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [f"{M.shape[0]} {M.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in M]
    text = "\n".join(lines) + "\n"
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w") as fh:
            fh.write(text)


def read_matrix(source: Union[str, os.PathLike, TextIO]) -> np.ndarray:
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source) as fh:
            text = fh.read()
    tokens = text.split()
    if len(tokens) < 2:
        raise StructuralError("matrix file lacks the 'rows cols' header")
    rows, cols = int(tokens[0]), int(tokens[1])
    vals = np.array([float(v) for v in tokens[2:]])
    if vals.size != rows * cols:
        raise StructuralError(f"expected {rows * cols} values, found {vals.size}")
    return vals.reshape(rows, cols)


def matrix_to_text(M) -> str:
    buf = io.StringIO()
    write_matrix(buf, M)
    return buf.getvalue()
