"""Benchmark circuits and the MNA / loop-cutset assemblers.

Benchmark matrices are stored literally; the assemblers are independent
constructions used to cross-check them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .phdae_core import (PHDAESystem, SinusoidalInput, StructuralError, ZeroInput,
                         numerical_rank, write_matrix)
from .integrators import expm_orbit
from .splitting import SemiExplicitDAE, jr_case

DIFFERENTIAL = "differential"
ALGEBRAIC1 = "algebraic-index1"
ALGEBRAIC2 = "algebraic-index2"


class UnknownBenchmark(KeyError):
    pass


@dataclass(frozen=True)
class Benchmark:
    id: str
    description: str
    interval: Tuple[float, float]
    x0: np.ndarray
    variable_classes: Tuple[str, ...]
    names: Tuple[str, ...]
    system: Optional[PHDAESystem] = None
    coupled: Optional[SemiExplicitDAE] = None
    analytic: Optional[Callable] = None
    groups: Dict[str, np.ndarray] = field(default_factory=dict)
    strategy: str = "jr"

    @property
    def n(self) -> int:
        return self.x0.size

    @property
    def T(self) -> float:
        return self.interval[1] - self.interval[0]

    def class_indices(self, cls: str) -> np.ndarray:
        return np.array([i for i, c in enumerate(self.variable_classes) if c == cls], dtype=int)

    def report_groups(self) -> Dict[str, np.ndarray]:
        """Variable groups used for error reports: differential/algebraic plus any named groups."""
        out = {}
        diff = self.class_indices(DIFFERENTIAL)
        alg = np.array([i for i, c in enumerate(self.variable_classes) if c != DIFFERENTIAL], dtype=int)
        if diff.size:
            out["differential"] = diff
        if alg.size:
            out["algebraic"] = alg
        out.update(self.groups)
        return out

    def energy_matrix(self) -> np.ndarray:
        if self.system is not None:
            s = self.system
            return s.Q.T @ s.E
        return self.coupled.M


# --------------------------------------------------------------------------
# Example: coupled LC oscillators with damping

LC = dict(C1=1e-5, C2=1e-5, R1=10.0, R2=10.0, L1=0.2, L2=0.2)
LC_NAMES = ("e1", "e2", "j1", "e3", "e4", "j2", "jco")


def _lc_system() -> PHDAESystem:
    p = LC
    g1, g2 = 1.0 / p["R1"], 1.0 / p["R2"]
    E = np.diag([p["C1"], 0.0, p["L1"], 0.0, p["C2"], p["L2"], 0.0])
    J = np.zeros((7, 7))
    J[1, 2], J[2, 1] = -1.0, 1.0          # subsystem 1
    J[3, 5], J[5, 3] = -1.0, 1.0          # subsystem 2
    J[3, 6], J[6, 3] = 1.0, -1.0
    J[1, 6], J[6, 1] = -1.0, 1.0          # coupling through jco
    R = np.zeros((7, 7))
    R[np.ix_([0, 1], [0, 1])] = [[g1, -g1], [-g1, g1]]
    R[np.ix_([3, 4], [3, 4])] = [[g2, -g2], [-g2, g2]]
    x0 = np.array([0.1, -9.9, 1.0, -9.9, 0.1, 1.0, 0.0])
    return PHDAESystem(E, J, R, B=np.zeros((7, 0)), x0=x0, names=LC_NAMES)


def _lc_generator():
    p = LC
    R1, R2 = p["R1"], p["R2"]
    M = np.diag([p["C1"], p["C2"], p["L1"], p["L2"]])
    A = -(R1 * R2 / (R1 + R2)) * np.array([
        [1 / (R1 * R2), -1 / (R1 * R2), 1 / R1, 1 / R1],
        [-1 / (R1 * R2), 1 / (R1 * R2), 1 / R2, 1 / R2],
        [-1 / R1, -1 / R2, 1.0, 1.0],
        [-1 / R1, -1 / R2, 1.0, 1.0],
    ])
    return np.linalg.solve(M, A)


def lc_analytic(t) -> np.ndarray:
    """Exact state (e1, e2, j1, e3, e4, j2, jco) of the coupled oscillators.

    Differential part from the matrix exponential of the inherent ODE,
    algebraic part from the elimination formulas. Vectorized over t.
    """
    p = LC
    R1, R2 = p["R1"], p["R2"]
    t = np.asarray(t, dtype=float)
    G = _lc_generator()
    xd0 = np.array([0.1, 0.1, 1.0, 1.0])       # (e1, e4, j1, j2)
    ts = np.atleast_1d(t).ravel()
    xd = expm_orbit(G, xd0, ts)
    e1, e4, j1, j2 = xd.T
    e2 = R1 * R2 / (R1 + R2) * (e1 / R1 + e4 / R2 - j1 - j2)
    jco = (e1 - e2) / R1 - j1
    X = np.stack([e1, e2, j1, e2.copy(), e4, j2, jco], axis=-1)
    return X.reshape(t.shape + (7,))


# --------------------------------------------------------------------------
# Example: two transmission lines with private index-2 substructures

TL = dict(C=1e-5, Rc=1.0, L=1e-2, C1=2e-4, C2=4e-4, R1=1e2, R2=5e1)
TL_NAMES = ("e11", "j", "e21",
            "e12_1", "e12_2", "ju1", "jv1",
            "e22_1", "e22_2", "ju2", "jv2")


def _tl_coupled() -> SemiExplicitDAE:
    p = TL
    gc, g1, g2 = 1.0 / p["Rc"], 1.0 / p["R1"], 1.0 / p["R2"]
    M = np.zeros((11, 11))
    M[0, 0], M[1, 1], M[4, 4], M[8, 8] = p["C"], p["L"], p["C1"], p["C2"]

    base = np.zeros((11, 11))
    base[0, [0, 2]] = [-gc, gc]
    base[1, 2] = 1.0
    base[2, [0, 1, 2]] = [-gc, 1.0, gc]
    for off, g in ((3, g1), (7, g2)):
        a, b, ju, jv = off, off + 1, off + 2, off + 3
        base[a, a] = -1.0                       # 0 = u_i - e_i2^1
        base[b, [a, b, jv]] = [g, -g, 1.0]      # C_i e_i2^2' = (e_i2^1 - e_i2^2)/R_i + jv_i
        base[ju, [a, b, ju]] = [g, -g, -1.0]    # 0 = (e_i2^1 - e_i2^2)/R_i - ju_i
        base[jv, b] = -1.0                      # 0 = v_i - e_i2^2

    def A_of(t):
        A = base.copy()
        A[3, 0] = 0.5 * np.sin(2e3 * t)
        A[7, 2] = 0.5 * np.sin(1e3 * t)
        return A

    def F(t, x):
        f = A_of(t) @ x
        f[6] += np.sin(1e3 * t)
        f[10] += np.sin(3e3 * t)
        return f

    blocks = {"x11": [0], "z11": [], "x21": [1], "z21": [2],
              "x12": [], "z12": [3, 4, 5, 6], "x22": [], "z22": [7, 8, 9, 10]}
    x0 = np.zeros(11)
    x0[1], x0[2], x0[6], x0[10] = 1.0, -1.0, 0.2, 1.2
    return SemiExplicitDAE(M, F, blocks, x0, jacobian=lambda t, x: A_of(t), names=TL_NAMES)


# --------------------------------------------------------------------------
# Example: crosstalk between two transmission lines (implicit ODE)

CT = dict(CR=1e-10, C=1e-9, R0=0.1, RL=10.0, L1=1e-6, L2=5e-7)
CT_NAMES = ("e1", "e2", "e3", "e4", "e5", "e6", "j1", "j2")


def _crosstalk_system() -> PHDAESystem:
    p = CT
    g0, gl = 1.0 / p["R0"], 1.0 / p["RL"]
    J = np.zeros((8, 8))
    J[1, 6], J[2, 6], J[4, 7], J[5, 7] = -1.0, 1.0, -1.0, 1.0
    J[6, 1], J[6, 2], J[7, 4], J[7, 5] = 1.0, -1.0, 1.0, -1.0
    R = np.zeros((8, 8))
    R[np.ix_([0, 1], [0, 1])] = [[g0, -g0], [-g0, g0]]
    R[np.ix_([3, 4], [3, 4])] = [[g0, -g0], [-g0, g0]]
    R[np.ix_([2, 5], [2, 5])] = [[gl, -gl], [-gl, gl]]
    E = np.diag([p["CR"], p["CR"], p["CR"] + p["C"], p["CR"], p["CR"], p["C"], p["L1"], p["L2"]])
    E[2, 5] = E[5, 2] = -p["C"]
    B = np.array([[-1.0], [0], [0], [1.0], [0], [0], [0], [0]])
    inp = SinusoidalInput([[0.5]], [2e7])
    return PHDAESystem(E, J, R, B, input=inp, x0=np.zeros(8), names=CT_NAMES)


# --------------------------------------------------------------------------
# Example: index-1 system with the constraint in the conserving part

def _case_a_system() -> PHDAESystem:
    J = np.array([[0, 0, -1, 0],
                  [0, 0, 1, -1],
                  [1, -1, 0, -1],
                  [0, 1, 1, 0]], dtype=float)
    R = np.zeros((4, 4))
    R[:2, :2] = [[3, -1], [-1, 3]]
    E = np.diag([1.0, 1.0, 0.0, 0.0])
    B = np.array([[1.0], [0], [0], [0]])
    inp = SinusoidalInput([[2.0]], [2 * np.pi])
    return PHDAESystem(E, J, R, B, input=inp, x0=np.zeros(4), names=("x1", "x2", "x3", "x4"))


# --------------------------------------------------------------------------
# Example: small RLC network by modified nodal analysis (constraint in R)

RLC = dict(C=1e-4, R1=1.0, R2=1.0, L=0.2)


def _mna_rlc_system() -> PHDAESystem:
    p = RLC
    g1, g2 = 1.0 / p["R1"], 1.0 / p["R2"]
    J = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    R = np.array([[g1, 0, -g1], [0, 0, 0], [-g1, 0, g1 + g2]])
    E = np.diag([p["C"], p["L"], 0.0])
    B = np.array([[0.0], [0.0], [1.0]])
    inp = SinusoidalInput([[5.0]], [1e2])
    return PHDAESystem(E, J, R, B, input=inp, x0=np.zeros(3), names=("e1", "j", "e2"))


def mna_rlc_incidence() -> "IncidenceData":
    """Topology of the RLC network; node order (e1, e2)."""
    p = RLC
    return IncidenceData(
        A_C=[[1], [0]], A_L=[[1], [0]], A_R=[[1, 0], [-1, 1]], A_I=[[0], [-1]],
        A_V=np.zeros((2, 0)), C=[[p["C"]]], L=[[p["L"]]],
        G=np.diag([1 / p["R1"], 1 / p["R2"]]))


# --------------------------------------------------------------------------
# Example: GHz RLC circuit by loop-cutset analysis (violates both J-R cases)

GHZ = dict(C1=1e-12, C2=5e-13, C3=1e-12, R1=2e-2, R2=2e-2, L1=5e-7, L2=5e-7, L3=5e-7)
GHZ_NAMES = ("iL1", "iL2", "iL3", "vC1", "vC2", "vC3", "vR1", "vR2")


def _loopcutset_system() -> PHDAESystem:
    p = GHZ
    J = np.zeros((8, 8))
    J[0, 3:7] = 1.0
    J[1, 4], J[1, 7] = -1.0, 1.0
    J[2, 5], J[2, 7] = -1.0, -1.0
    J = J - J.T
    R = np.diag([0, 0, 0, 0, 0, 0, 1 / p["R1"], 1 / p["R2"]])
    E = np.diag([p["L1"], p["L2"], p["L3"], p["C1"], p["C2"], p["C3"], 0.0, 0.0])
    B = np.zeros((8, 1))
    B[0, 0] = -1.0
    inp = SinusoidalInput([[1.0]], [1e9])
    return PHDAESystem(E, J, R, B, input=inp, x0=np.zeros(8), names=GHZ_NAMES)


def loopcutset_rlc_cutset() -> "CutsetData":
    p = GHZ
    return CutsetData(
        Q_CL=[[1, 0, 0], [1, -1, 0], [1, 0, -1]],
        Q_GL=[[1, 0, 0], [0, 1, -1]],
        Q_VL=[[-1, 0, 0]],
        L=np.diag([p["L1"], p["L2"], p["L3"]]),
        C=np.diag([p["C1"], p["C2"], p["C3"]]),
        G=np.diag([1 / p["R1"], 1 / p["R2"]]))


def case_b_cutset(L=1.0, C=1.0, R=1.0) -> "CutsetData":
    """Single-loop LC circuit with a current-defined resistor and a voltage source."""
    return CutsetData(Q_CL=[[1]], Q_CR=[[0]], Q_VL=[[1]], Q_VR=[[1]],
                      L=[[L]], C=[[C]], R=[[R]])


# --------------------------------------------------------------------------
# registry

def _classes(E):
    d = np.diag(E)
    return tuple(DIFFERENTIAL if v != 0 else ALGEBRAIC1 for v in d)


@lru_cache(maxsize=None)
def benchmark(id: str) -> Benchmark:
    if id == "lc_oscillator":
        s = _lc_system()
        blocks = {"x11": [0, 2], "z11": [1], "x21": [4, 5], "z21": [3, 6]}
        coupled = SemiExplicitDAE.from_phdae(s, blocks)
        return Benchmark(id, "coupled LC oscillators with damping, index 1", (0.0, 0.2), s.x0,
                         _classes(s.E), LC_NAMES, system=s, coupled=coupled,
                         analytic=lc_analytic, strategy="dim_reducing")
    if id == "transmission_private2":
        c = _tl_coupled()
        cls = [ALGEBRAIC1] * 11
        cls[0] = cls[1] = DIFFERENTIAL
        cls[6] = cls[10] = ALGEBRAIC2
        groups = {"coupling": np.array([0, 1, 2]),
                  "substructure1": np.array([3, 4, 5, 6]),
                  "substructure2": np.array([7, 8, 9, 10])}
        return Benchmark(id, "transmission lines with private index-2 substructures", (0.0, 4e-3),
                         c.x0, tuple(cls), TL_NAMES, coupled=c, groups=groups,
                         strategy="dim_reducing_private2")
    if id == "crosstalk_ode":
        s = _crosstalk_system()
        return Benchmark(id, "crosstalk between transmission lines, implicit ODE", (0.0, 1e-7),
                         s.x0, _classes(s.E), CT_NAMES, system=s)
    if id == "index1_case_a":
        s = _case_a_system()
        return Benchmark(id, "index-1 system with constraints in the conserving part", (0.0, 2.0),
                         s.x0, _classes(s.E), s.names, system=s)
    if id == "mna_rlc":
        s = _mna_rlc_system()
        return Benchmark(id, "RLC network by nodal analysis, constraints in the dissipative part",
                         (0.0, 1.0), s.x0, _classes(s.E), s.names, system=s)
    if id == "loopcutset_rlc":
        s = _loopcutset_system()
        return Benchmark(id, "GHz RLC circuit by loop-cutset analysis", (0.0, 1e-7),
                         s.x0, _classes(s.E), GHZ_NAMES, system=s, strategy="jr_epsilon")
    raise UnknownBenchmark(id)


BENCHMARK_IDS = ("lc_oscillator", "transmission_private2", "crosstalk_ode",
                 "index1_case_a", "mna_rlc", "loopcutset_rlc")


def benchmark_ids() -> Tuple[str, ...]:
    return BENCHMARK_IDS


def export_benchmark(id: str, directory) -> Dict[str, str]:
    """Write matrices as plain text and metadata as JSON; returns the written paths."""
    b = benchmark(id)
    os.makedirs(directory, exist_ok=True)
    out = {}
    mats = {}
    if b.system is not None:
        s = b.system
        mats = {"E": s.E, "J": s.J, "R": s.R, "B": s.B, "Q": s.Q}
    else:
        mats = {"M": b.coupled.M, "A0": b.coupled.dfdx(0.0, b.x0)}
    mats["x0"] = b.x0.reshape(-1, 1)
    for k, M in mats.items():
        path = os.path.join(directory, f"{id}_{k}.txt")
        write_matrix(path, M)
        out[k] = path
    meta = {"id": id, "description": b.description, "interval": list(b.interval),
            "names": list(b.names), "variable_classes": list(b.variable_classes),
            "strategy": b.strategy}
    if b.system is not None and isinstance(b.system.input, SinusoidalInput):
        inp = b.system.input
        meta["input"] = {"amplitudes": inp.amplitudes.tolist(), "omegas": inp.omegas.tolist(),
                         "phases": inp.phases.tolist()}
    path = os.path.join(directory, f"{id}.json")
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2)
    out["meta"] = path
    return out


# --------------------------------------------------------------------------
# modified nodal analysis


def _mat(M, rows=None, cols=None, name=""):
    A = np.array(M, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, 1) if rows is not None and A.size == rows else A.reshape(1, -1)
    if A.size == 0:
        A = np.zeros((rows or 0, cols or 0))
    if rows is not None and A.shape[0] != rows:
        raise StructuralError(f"{name} has {A.shape[0]} rows, expected {rows}")
    if cols is not None and A.shape[1] != cols:
        raise StructuralError(f"{name} has {A.shape[1]} columns, expected {cols}")
    return A


@dataclass(frozen=True)
class IncidenceData:
    """Reduced incidence matrices (ground removed) and element values."""

    A_C: np.ndarray
    A_L: np.ndarray
    A_R: np.ndarray
    A_I: np.ndarray
    A_V: np.ndarray
    C: np.ndarray
    L: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        nodes = None
        for k in ("A_C", "A_L", "A_R", "A_I", "A_V"):
            A = np.array(getattr(self, k), dtype=float)
            if A.ndim == 1:
                A = A.reshape(-1, 1)
            if A.size == 0:
                A = A.reshape(A.shape[0] if A.ndim == 2 else 0, 0)
            if nodes is None and A.shape[0] > 0:
                nodes = A.shape[0]
            object.__setattr__(self, k, A)
        nodes = nodes or 0
        for k in ("A_C", "A_L", "A_R", "A_I", "A_V"):
            A = getattr(self, k)
            if A.shape[1] == 0:
                object.__setattr__(self, k, np.zeros((nodes, 0)))
            elif A.shape[0] != nodes:
                raise StructuralError(f"{k} has {A.shape[0]} rows, expected {nodes}")
            elif not np.all(np.isin(A, (-1.0, 0.0, 1.0))):
                raise StructuralError(f"{k} must have entries in {{-1, 0, 1}}")
        object.__setattr__(self, "C", _mat(self.C, self.A_C.shape[1], self.A_C.shape[1], "C"))
        object.__setattr__(self, "L", _mat(self.L, self.A_L.shape[1], self.A_L.shape[1], "L"))
        object.__setattr__(self, "G", _mat(self.G, self.A_R.shape[1], self.A_R.shape[1], "G"))

    @property
    def nodes(self) -> int:
        return self.A_C.shape[0]


def assemble_mna(data: IncidenceData, sources=None) -> PHDAESystem:
    """pH form of the MNA equations for x = (e, j_L, j_V) and u = (i, v).

    The output is y = (-A_I^T e, -j_V).
    """
    nv = data.A_V.shape[1]
    if nv and numerical_rank(data.A_V) < nv:
        raise StructuralError("A_V must have full column rank")
    ne, nl, ni = data.nodes, data.A_L.shape[1], data.A_I.shape[1]
    n = ne + nl + nv
    E = np.zeros((n, n))
    E[:ne, :ne] = data.A_C @ data.C @ data.A_C.T
    E[ne:ne + nl, ne:ne + nl] = data.L
    J = np.zeros((n, n))
    J[:ne, ne:ne + nl] = -data.A_L
    J[:ne, ne + nl:] = -data.A_V
    J[ne:ne + nl, :ne] = data.A_L.T
    J[ne + nl:, :ne] = data.A_V.T
    R = np.zeros((n, n))
    R[:ne, :ne] = data.A_R @ data.G @ data.A_R.T
    B = np.zeros((n, ni + nv))
    B[:ne, :ni] = -data.A_I
    B[ne + nl:, ni:] = -np.eye(nv)
    inp = sources if sources is not None else ZeroInput(ni + nv)
    return PHDAESystem(E, J, R, B, input=inp, x0=np.zeros(n))


# --------------------------------------------------------------------------
# loop-cutset analysis


@dataclass(frozen=True)
class CutsetData:
    """Fundamental cutset sub-blocks Q_XY (rows: twig type X, columns: link type Y) and element values.

    Dimensions: Q_CL (nC x nL), Q_GL (nG x nL), Q_CR (nC x nR), Q_GR (nG x nR),
    Q_CI (nC x nI), Q_GI (nG x nI), Q_VL (nV x nL), Q_VR (nV x nR), Q_VI (nV x nI).
    """

    Q_CL: np.ndarray = None
    Q_GL: np.ndarray = None
    Q_CR: np.ndarray = None
    Q_GR: np.ndarray = None
    Q_CI: np.ndarray = None
    Q_GI: np.ndarray = None
    Q_VL: np.ndarray = None
    Q_VR: np.ndarray = None
    Q_VI: np.ndarray = None
    L: np.ndarray = None
    C: np.ndarray = None
    R: np.ndarray = None
    G: np.ndarray = None

    def __post_init__(self):
        def size(M):
            return 0 if M is None else np.atleast_2d(np.asarray(M, dtype=float)).shape[0]

        nL, nC, nR, nG = size(self.L), size(self.C), size(self.R), size(self.G)
        nV = size(self.Q_VL) or size(self.Q_VR) or size(self.Q_VI)
        nI = 0
        for k, (r, off) in {"Q_CI": (nC, 1), "Q_GI": (nG, 1), "Q_VI": (nV, 1)}.items():
            M = getattr(self, k)
            if M is not None and np.size(M):
                nI = max(nI, np.atleast_2d(np.asarray(M)).shape[1])
        dims = {"Q_CL": (nC, nL), "Q_GL": (nG, nL), "Q_CR": (nC, nR), "Q_GR": (nG, nR),
                "Q_CI": (nC, nI), "Q_GI": (nG, nI), "Q_VL": (nV, nL), "Q_VR": (nV, nR),
                "Q_VI": (nV, nI), "L": (nL, nL), "C": (nC, nC), "R": (nR, nR), "G": (nG, nG)}
        for k, (r, c) in dims.items():
            M = getattr(self, k)
            A = np.zeros((r, c)) if M is None or np.size(M) == 0 else np.atleast_2d(np.array(M, dtype=float))
            if A.shape != (r, c):
                raise StructuralError(f"{k} has shape {A.shape}, expected {(r, c)}")
            object.__setattr__(self, k, A)
        object.__setattr__(self, "dims", dict(L=nL, C=nC, R=nR, G=nG, V=nV, I=nI))


def assemble_loopcutset(data: CutsetData, sources=None) -> PHDAESystem:
    """pH form of the loop-cutset equations for x = (j_L, v_C, j_R, v_G), u = (i_s, v_s).

    Feed-through N = -K_z; output y = -z.
    """
    d = data.dims
    nL, nC, nR, nG, nV, nI = d["L"], d["C"], d["R"], d["G"], d["V"], d["I"]
    nx, ny = nL + nC, nR + nG
    Dm = np.zeros((nx, nx))
    Dm[:nL, :nL], Dm[nL:, nL:] = data.L, data.C
    Jm = np.zeros((nx, nx))
    Jm[:nL, nL:] = -data.Q_CL.T
    Jm[nL:, :nL] = data.Q_CL
    Mm = np.zeros((nx, ny))
    Mm[:nL, nR:] = -data.Q_GL.T
    Mm[nL:, :nR] = data.Q_CR
    S1 = np.zeros((ny, ny))
    S1[:nR, :nR], S1[nR:, nR:] = data.R, data.G
    S2 = np.zeros((ny, ny))
    S2[:nR, nR:] = data.Q_GR.T
    S2[nR:, :nR] = -data.Q_GR
    Kx = np.zeros((nI + nV, nx))
    Kx[:nI, nL:] = -data.Q_CI.T
    Kx[nI:, :nL] = data.Q_VL
    Ky = np.zeros((nI + nV, ny))
    Ky[:nI, nR:] = -data.Q_GI.T
    Ky[nI:, :nR] = data.Q_VR
    Kz = np.zeros((nI + nV, nI + nV))
    Kz[:nI, nI:] = data.Q_VI.T
    Kz[nI:, :nI] = -data.Q_VI

    n = nx + ny
    E = np.zeros((n, n))
    E[:nx, :nx] = Dm
    J = np.zeros((n, n))
    J[:nx, :nx] = -Jm
    J[:nx, nx:] = -Mm
    J[nx:, :nx] = Mm.T
    J[nx:, nx:] = S2
    R = np.zeros((n, n))
    R[nx:, nx:] = S1
    B = np.vstack([Kx.T, Ky.T])
    inp = sources if sources is not None else ZeroInput(nI + nV)
    return PHDAESystem(E, J, R, B, N=-Kz, input=inp, x0=np.zeros(n))


# --------------------------------------------------------------------------
# J-R applicability


@dataclass(frozen=True)
class JRClassification:
    case: str                      # 'case_a', 'case_b', 'neither' or 'ode'
    products: Dict[str, float]
    pencil_EJ_regular: bool
    pencil_ER_regular: bool

    def __str__(self):
        prods = ", ".join(f"{k}={v:.3g}" for k, v in self.products.items())
        return (f"{self.case} ({prods}; {{E,J}} regular: {self.pencil_EJ_regular}, "
                f"{{E,R}} regular: {self.pencil_ER_regular})")


def classify_jr_case(sys: PHDAESystem, rank_tolerance: float = 1e-10) -> JRClassification:
    """Which J-R decomposition applies; agrees with decompose_jr."""
    from .phdae_core import pencil_regular
    case, _, prods = jr_case(sys, rank_tolerance)
    s = sys.normalized()
    return JRClassification(case, prods, pencil_regular(s.E, s.J, rank_tolerance),
                            pencil_regular(s.E, s.R, rank_tolerance))
