"""Runge-Kutta one-step solvers for linear implicit DAEs and residual-form DAEs,
and the generalized Cayley transform.

Stages follow the usual direct formulation for DAEs: with stage slopes K_i,

    X_i = x + h * sum_j a_ij K_j,     Elhs K_i = A X_i + B u(t + c_i h),
    x_next = x + h * sum_i b_i K_i,

so algebraic equations are imposed at every stage value.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction as Fr
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy import linalg as sla

from .phdae_core import ZeroInput, pencil_regular, energy_norm


class StepFailure(RuntimeError):
    """A single step could not be completed."""

    def __init__(self, message, t=None, h=None, residual=None, step_index=None):
        super().__init__(message)
        self.t = t
        self.h = h
        self.residual = residual
        self.step_index = step_index

    def __str__(self):
        extra = []
        if self.step_index is not None:
            extra.append(f"step={self.step_index}")
        if self.t is not None:
            extra.append(f"t={self.t:.6g}")
        if self.h is not None:
            extra.append(f"h={self.h:.3g}")
        if self.residual is not None:
            extra.append(f"residual={self.residual:.3e}")
        base = super().__str__()
        return f"{base} ({', '.join(extra)})" if extra else base


class SingularPencilError(ValueError):
    pass


# --------------------------------------------------------------------------
# tableaus


@dataclass(frozen=True)
class ButcherTableau:
    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    stated_orders: Dict[str, Optional[int]]
    stability_class: str
    family: str = ""

    @property
    def s(self) -> int:
        return self.b.size

    @property
    def explicit(self) -> bool:
        return bool(np.all(np.triu(self.A) == 0))

    @property
    def stiffly_accurate(self) -> bool:
        return bool(np.array_equal(self.A[-1], self.b))

    def to_text(self) -> str:
        rows = []
        for i in range(self.s):
            rows.append(f"{self.c[i]: .6f} | " + " ".join(f"{v: .6f}" for v in self.A[i]))
        rows.append("-" * (11 + 10 * self.s))
        rows.append(" " * 9 + " | " + " ".join(f"{v: .6f}" for v in self.b))
        return f"{self.name} ({self.family}, s={self.s})\n" + "\n".join(rows)


def _orders(ode, i1d=None, i1a=None, i2d=None, i2a=None):
    return {"ode": ode, "index1_diff": i1d, "index1_alg": i1a,
            "index2_diff": i2d, "index2_alg": i2a}


def _gauss_orders(s):
    if s % 2:
        return _orders(2 * s, 2 * s, s + 1, s + 1, s - 1)
    return _orders(2 * s, 2 * s, s, s, s - 2)


def _mk(name, family, A, b, c, orders, stab):
    f = lambda v: np.array([[float(x) for x in row] for row in v]) if isinstance(v[0], (list, tuple)) \
        else np.array([float(x) for x in v])
    Am, bm, cm = f(A), f(b), f(c)
    for arr in (Am, bm, cm):
        arr.setflags(write=False)
    return ButcherTableau(name, Am, bm, cm, orders, stab, family)


def _build_tableaus():
    h = Fr(1, 2)
    tabs = {}
    tabs["gauss1"] = _mk("gauss1", "Gauss", [[h]], [1], [h], _gauss_orders(1), "A")
    s = 2
    tabs["lobatto3c_2"] = _mk("lobatto3c_2", "Lobatto IIIC", [[h, -h], [h, h]], [h, h], [0, 1],
                              _orders(2 * s - 2, 2 * s - 2, 2 * s - 2, 2 * s - 2, s - 1), "L")
    s = 3
    tabs["lobatto3c_3"] = _mk(
        "lobatto3c_3", "Lobatto IIIC",
        [[Fr(1, 6), Fr(-1, 3), Fr(1, 6)], [Fr(1, 6), Fr(5, 12), Fr(-1, 12)], [Fr(1, 6), Fr(2, 3), Fr(1, 6)]],
        [Fr(1, 6), Fr(2, 3), Fr(1, 6)], [0, h, 1],
        _orders(2 * s - 2, 2 * s - 2, 2 * s - 2, 2 * s - 2, s - 1), "L")
    s = 1
    tabs["radau2a_1"] = _mk("radau2a_1", "Radau IIA", [[1]], [1], [1],
                            _orders(2 * s - 1, 2 * s - 1, 2 * s - 1, 2 * s - 1, s), "L")
    s = 2
    tabs["radau2a_2"] = _mk("radau2a_2", "Radau IIA", [[Fr(5, 12), Fr(-1, 12)], [Fr(3, 4), Fr(1, 4)]],
                            [Fr(3, 4), Fr(1, 4)], [Fr(1, 3), 1],
                            _orders(2 * s - 1, 2 * s - 1, 2 * s - 1, 2 * s - 1, s), "L")
    tabs["radau1a_2"] = _mk("radau1a_2", "Radau IA", [[Fr(1, 4), Fr(-1, 4)], [Fr(1, 4), Fr(5, 12)]],
                            [Fr(1, 4), Fr(3, 4)], [0, Fr(2, 3)],
                            _orders(2 * s - 1, 2 * s - 1, s, s, s - 1), "L")
    tabs["euler_explicit"] = _mk("euler_explicit", "explicit", [[0]], [1], [0], _orders(1), "explicit")
    tabs["heun"] = _mk("heun", "explicit", [[0, 0], [1, 0]], [h, h], [0, 1], _orders(2), "explicit")
    return tabs


_TABLEAUS = _build_tableaus()

ALIASES = {
    "mid": "gauss1", "midpoint": "gauss1",
    "iE": "radau2a_1", "implicit_euler": "radau2a_1",
    "eE": "euler_explicit", "explicit_euler": "euler_explicit",
    "Heun": "heun",
    "Lob3C": "lobatto3c_2", "Lob3c": "lobatto3c_2", "Lob2": "lobatto3c_2",
    "Lob3": "lobatto3c_3",
    "Rad1A": "radau1a_2", "Rad2A": "radau2a_2",
}

TABLEAU_NAMES = tuple(_TABLEAUS)


def tableau(name: str) -> ButcherTableau:
    """Look up a named tableau (canonical name or short legend alias)."""
    if isinstance(name, ButcherTableau):
        return name
    key = ALIASES.get(name, name)
    try:
        return _TABLEAUS[key]
    except KeyError:
        raise KeyError(f"unknown tableau {name!r}; known: {', '.join(TABLEAU_NAMES)}") from None


# --------------------------------------------------------------------------
# problem types


@dataclass(frozen=True)
class LinearDAEProblem:
    """Elhs x' = A x + Bmat u(t)."""

    Elhs: np.ndarray
    A: np.ndarray
    Bmat: Optional[np.ndarray] = None
    input: Optional[Callable] = None

    def __post_init__(self):
        E = np.array(self.Elhs, dtype=float)
        n = E.shape[0]
        A = np.array(self.A, dtype=float)
        if E.shape != (n, n) or A.shape != (n, n):
            raise ValueError("Elhs and A must be square of equal size")
        B = np.zeros((n, 0)) if self.Bmat is None else np.array(self.Bmat, dtype=float).reshape(n, -1)
        for arr in (E, A, B):
            arr.setflags(write=False)
        object.__setattr__(self, "Elhs", E)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Bmat", B)
        if self.input is None:
            object.__setattr__(self, "input", ZeroInput(B.shape[1]))

    @property
    def n(self) -> int:
        return self.Elhs.shape[0]

    @property
    def m(self) -> int:
        return self.Bmat.shape[1]

    def u(self, t) -> np.ndarray:
        if self.m == 0:
            return np.zeros(np.shape(t) + (0,))
        return np.asarray(self.input(t), dtype=float)


@dataclass(frozen=True)
class ResidualDAEProblem:
    """F(t, x, x') = 0 where only components flagged in ``mask`` enter through x'.

    ``residual(t, x, xdot)`` receives full-length vectors and returns n values;
    entries of ``xdot`` outside the mask must not influence the result.
    ``jacobian(t, x, xdot)``, when given, returns (dF/dx, dF/dxdot);
    otherwise forward differences with step sqrt(eps)*(1+|x_i|) are used.
    """

    mask: np.ndarray
    residual: Callable
    jacobian: Optional[Callable] = None

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool).reshape(-1)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def n(self) -> int:
        return self.mask.size


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 12


# --------------------------------------------------------------------------
# linear stage solves


def _equilibration(E, A):
    """Diagonal scaling s so that diag(s) E diag(s) has unit diagonal where E is nonzero."""
    d = np.abs(np.diag(E)).astype(float)
    big = d.max() if d.size else 0.0
    small = d <= 1e-14 * big if big > 0 else np.ones_like(d, dtype=bool)
    if np.any(small):
        rowmax = np.abs(A).max(axis=1) if A.size else np.zeros_like(d)
        d = np.where(small, rowmax, d)
        d[d == 0] = 1.0
    return 1.0 / np.sqrt(d)


def _lu(M, what, t, h):
    try:
        with warnings.catch_warnings():
            # singularity is reported below as a StepFailure
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(M, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StepFailure(f"{what}: {exc}", t=t, h=h) from None
    dU = np.abs(np.diag(lu))
    if dU.size and (not np.all(np.isfinite(dU)) or dU.min() <= 1e-14 * max(dU.max(), 1e-300)):
        raise StepFailure(f"{what}: singular stage matrix", t=t, h=h)
    return lu, piv


class LinearStepMap:
    """Affine map x_next = Phi x + G [u(t + c_1 h); ...; u(t + c_s h)] of one RK step.

    Built once for a (problem, tableau, h, active set) and reused; frozen
    components have exact identity rows, so they pass through bitwise.
    """

    def __init__(self, prob: LinearDAEProblem, tab: ButcherTableau, h: float,
                 active: Optional[Sequence[int]] = None):
        n, m, s = prob.n, prob.m, tab.s
        a = np.arange(n) if active is None else np.asarray(active, dtype=int)
        na = a.size
        self.tab = tab
        self.h = float(h)
        self.active = a
        self.nodes = tab.c.copy()
        self.m = m
        Ea = prob.Elhs[np.ix_(a, a)]
        Aa = prob.A[np.ix_(a, a)]
        if tab.explicit and na and np.linalg.matrix_rank(Ea) < na:
            raise ValueError(f"explicit tableau {tab.name} needs a nonsingular left-hand matrix")
        sc = _equilibration(Ea, h * Aa)
        Et = sc[:, None] * Ea * sc[None, :]
        At = sc[:, None] * Aa * sc[None, :]
        M = np.kron(np.eye(s), Et) - h * np.kron(tab.A, At)
        Arow = sc[:, None] * prob.A[a, :]               # na x n
        Bt = sc[:, None] * prob.Bmat[a, :]              # na x m
        rhs = np.hstack([np.kron(np.ones((s, 1)), Arow), np.kron(np.eye(s), Bt)])
        lu = _lu(M, "stage system", None, h)
        W = sla.lu_solve(lu, rhs)
        bK = np.kron(tab.b[None, :], np.eye(na))        # na x s*na
        comb = h * sc[:, None] * (bK @ W)
        Phi = np.eye(n)
        Phi[a, :] += comb[:, :n]
        self.Phi = Phi
        G = np.zeros((n, s * m))
        G[a, :] = comb[:, n:]
        self.G = G

    def input_block(self, prob: LinearDAEProblem, t: float) -> np.ndarray:
        if self.m == 0:
            return np.zeros(0)
        return np.asarray(prob.u(t + self.nodes * self.h), dtype=float).reshape(-1)

    def apply(self, prob: LinearDAEProblem, t: float, x: np.ndarray) -> np.ndarray:
        y = self.Phi @ x
        if self.m:
            y = y + self.G @ self.input_block(prob, t)
        out = np.array(x, dtype=float, copy=True)
        out[self.active] = y[self.active]
        return out


def irk_step_linear(prob: LinearDAEProblem, tab, t: float, h: float, x,
                    active: Optional[Sequence[int]] = None) -> np.ndarray:
    """One Runge-Kutta step for Elhs x' = A x + Bmat u(t) by a dense stage solve.

    Only components in ``active`` are updated; the rest are held fixed and
    enter as constant data. Negative h is allowed.
    """
    tab = tableau(tab)
    x = np.asarray(x, dtype=float)
    n, s = prob.n, tab.s
    a = np.arange(n) if active is None else np.asarray(active, dtype=int)
    na = a.size
    Ea = prob.Elhs[np.ix_(a, a)]
    Aa = prob.A[np.ix_(a, a)]
    if tab.explicit and na and np.linalg.matrix_rank(Ea) < na:
        raise ValueError(f"explicit tableau {tab.name} needs a nonsingular left-hand matrix")
    sc = _equilibration(Ea, h * Aa)
    Et = sc[:, None] * Ea * sc[None, :]
    At = sc[:, None] * Aa * sc[None, :]
    M = np.kron(np.eye(s), Et) - h * np.kron(tab.A, At)
    base = sc * (prob.A[a, :] @ x)
    rhs = np.empty(s * na)
    for i in range(s):
        r = base
        if prob.m:
            r = r + sc * (prob.Bmat[a, :] @ prob.u(t + tab.c[i] * h))
        rhs[i * na:(i + 1) * na] = r
    lu = _lu(M, "stage system", t, h)
    K = sla.lu_solve(lu, rhs).reshape(s, na)
    out = x.copy()
    out[a] = x[a] + h * sc * (tab.b @ K)
    return out


# --------------------------------------------------------------------------
# residual-form stage solves


def irk_step_residual(prob: ResidualDAEProblem, tab, t: float, h: float, x,
                      newton: NewtonOptions = NewtonOptions(),
                      active: Optional[Sequence[int]] = None,
                      guess: Optional[np.ndarray] = None,
                      return_stages: bool = False):
    """One implicit RK step for F(t, x, x') = 0 with Newton on the stage slopes.

    The equations solved are the rows listed in ``active`` (default: all),
    which must pair one-to-one with the updated variables. Raises
    :class:`StepFailure` if Newton does not reach ``newton.tol`` on the
    max-norm of the stage residual.
    """
    tab = tableau(tab)
    if tab.explicit:
        raise ValueError("irk_step_residual needs an implicit tableau")
    x = np.asarray(x, dtype=float)
    n, s = prob.n, tab.s
    a = np.arange(n) if active is None else np.asarray(active, dtype=int)
    na = a.size
    times = t + tab.c * h

    def stages(Ka):
        K = np.zeros((s, n))
        K[:, a] = Ka
        X = x[None, :] + h * (tab.A @ K)
        return K, X

    def G(Ka):
        K, X = stages(Ka)
        return np.concatenate([np.asarray(prob.residual(times[i], X[i], K[i]))[a] for i in range(s)])

    def jac(Ka):
        K, X = stages(Ka)
        Jm = np.zeros((s * na, s * na))
        if prob.jacobian is not None:
            for i in range(s):
                Fx, Fxd = prob.jacobian(times[i], X[i], K[i])
                Fx = np.asarray(Fx)[np.ix_(a, a)]
                Fxd = np.asarray(Fxd)[np.ix_(a, a)]
                for j in range(s):
                    blk = h * tab.A[i, j] * Fx
                    if i == j:
                        blk = blk + Fxd
                    Jm[i * na:(i + 1) * na, j * na:(j + 1) * na] = blk
            return Jm
        g0 = G(Ka)
        flat = Ka.reshape(-1)
        scale = np.tile(1.0 + np.abs(x[a]), s)
        steps = np.sqrt(np.finfo(float).eps) * scale
        for k in range(flat.size):
            pert = flat.copy()
            pert[k] += steps[k]
            Jm[:, k] = (G(pert.reshape(s, na)) - g0) / steps[k]
        return Jm

    Ka = np.zeros((s, na)) if guess is None else np.array(guess, dtype=float).reshape(s, na)
    g = G(Ka)
    if not np.all(np.isfinite(g)):
        raise StepFailure("non-finite stage residual", t=t, h=h)
    res = float(np.max(np.abs(g))) if g.size else 0.0
    it = 0
    while res > newton.tol:
        if it >= newton.max_iter:
            raise StepFailure("Newton iteration did not converge", t=t, h=h, residual=res)
        Jm = jac(Ka)
        lu = _lu(Jm, "Newton matrix", t, h)
        Ka = Ka - sla.lu_solve(lu, g).reshape(s, na)
        g = G(Ka)
        if not np.all(np.isfinite(g)):
            raise StepFailure("non-finite stage residual", t=t, h=h)
        res = float(np.max(np.abs(g)))
        it += 1
    out = x.copy()
    out[a] = x[a] + h * (tab.b @ Ka)
    if return_stages:
        K, X = stages(Ka)
        return out, X, res
    return out


# --------------------------------------------------------------------------
# Cayley transform


def cayley(E, A) -> np.ndarray:
    """Generalized Cayley transform (E - A)^{-1} (E + A).

    The solve is done after a symmetric diagonal scaling, which keeps
    rounding errors small in the E-seminorm for badly scaled circuits.
    """
    E = np.asarray(E, dtype=float)
    A = np.asarray(A, dtype=float)
    sc = _equilibration(E, A)
    Et = sc[:, None] * E * sc[None, :]
    At = sc[:, None] * A * sc[None, :]
    try:
        lu = _lu(Et - At, "Cayley transform", None, None)
    except StepFailure as exc:
        raise SingularPencilError("E - A is singular") from exc
    Ct = sla.lu_solve(lu, Et + At)
    return sc[:, None] * Ct / sc[None, :]


@dataclass(frozen=True)
class DissipativeCheck:
    max_increase: float
    scale: float
    hypothesis_ok: bool
    notes: tuple = ()

    @property
    def relative(self) -> float:
        return self.max_increase / self.scale if self.scale > 0 else self.max_increase


def cayley_dissipative_check(E, A, samples: int = 64, seed: int = 0, tol: float = 1e-12) -> DissipativeCheck:
    """Largest observed ||C x||_E - ||x||_E over random x with ||x||_E = 1.

    Hypotheses (A + A^T negative semi-definite, regular pencil) are checked
    and reported in the result instead of raising.
    """
    E = np.asarray(E, dtype=float)
    A = np.asarray(A, dtype=float)
    notes = []
    sym = 0.5 * (A + A.T)
    top = np.linalg.eigvalsh(sym).max() if sym.size else 0.0
    if top > tol * max(np.linalg.norm(A, 2), 1.0):
        notes.append(f"A + A^T not negative semi-definite (max eig {top:.3e})")
    if not pencil_regular(E, A):
        notes.append("pencil {E, A} not regular")
    try:
        C = cayley(E, A)
    except SingularPencilError:
        notes.append("E - A singular")
        return DissipativeCheck(float("nan"), 1.0, False, tuple(notes))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((samples, E.shape[0]))
    nx = energy_norm(E, X)
    keep = nx > 1e-8 * np.linalg.norm(X, axis=1)
    X = X[keep] / nx[keep, None]
    diff = energy_norm(E, X @ C.T) - 1.0
    worst = float(diff.max()) if diff.size else 0.0
    return DissipativeCheck(worst, 1.0, not notes, tuple(notes))


def midpoint_step_cayley(E, J, h: float, x) -> np.ndarray:
    """Implicit midpoint step for E x' = J x written as C(E, h/2 J) x."""
    E = np.asarray(E, dtype=float)
    J = np.asarray(J, dtype=float)
    if not pencil_regular(E, J):
        raise SingularPencilError("pencil {E, J} is singular")
    return cayley(E, 0.5 * h * J) @ np.asarray(x, dtype=float)


def expm_orbit(G, x0, ts, block: int = 1024) -> np.ndarray:
    """exp(G t) x0 at each time in ``ts``.

    On a uniform grid one propagator exp(G dt) is raised to powers inside
    blocks, and every block restarts from exp(G t_start) x0 so that round-off
    does not accumulate over long grids.
    """
    G = np.asarray(G, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    n = x0.size
    if ts.size > 2:
        d = np.diff(ts)
        if d[0] > 0 and np.allclose(d, d[0], rtol=1e-8, atol=0):
            step = sla.expm(G * d[0])
            m = min(block, ts.size)
            P = np.empty((m, n, n))
            P[0] = np.eye(n)
            for k in range(1, m):
                P[k] = step @ P[k - 1]
            out = np.empty((ts.size, n))
            for k0 in range(0, ts.size, m):
                k1 = min(k0 + m, ts.size)
                out[k0:k1] = P[:k1 - k0] @ (sla.expm(G * ts[k0]) @ x0)
            return out
    return np.array([sla.expm(G * s) @ x0 for s in ts])
