"""Problem representations, conic transformation, cone projection, and quality metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .sparse import DimensionError, SparseMatrix, estimate_sigma_max

INF = float("inf")

_PSD_PROBES = 20
_PSD_TOL = 1e-10


def _check_psd_probes(P: SparseMatrix, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    for _ in range(_PSD_PROBES):
        x = rng.standard_normal(P.ncols)
        if x @ (P._csr @ x) < -_PSD_TOL * (x @ x):
            raise ValueError("P failed the PSD probe check")


def _check_symmetric(P: SparseMatrix) -> None:
    # exact structural + value comparison against the transpose
    Pt = P.transpose()
    if not (np.array_equal(P.indptr, Pt.indptr)
            and np.array_equal(P.indices, Pt.indices)
            and np.array_equal(P.values, Pt.values)):
        raise ValueError("P must be exactly symmetric")


@dataclass(frozen=True)
class ConeSpec:
    """Product cone: zero cone block first, then nonnegative cone block."""

    m_zero: int
    m_nonneg: int

    def __post_init__(self):
        if self.m_zero < 0 or self.m_nonneg < 0:
            raise ValueError("cone block sizes must be nonnegative")

    @property
    def m(self) -> int:
        return self.m_zero + self.m_nonneg


@dataclass(frozen=True)
class StandardQP:
    """QP with equalities, inequalities and box bounds.

    minimize 0.5 x'Px + c'x  s.t.  A_eq x = b_eq, G x <= h, l <= x <= u.
    Bound entries may be +-inf.
    """

    P: SparseMatrix
    c: np.ndarray
    A_eq: SparseMatrix
    b_eq: np.ndarray
    G: SparseMatrix
    h: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        n = self.P.nrows
        for name in ("c", "b_eq", "h", "l", "u"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.P.ncols != n:
            raise DimensionError("P must be square")
        if self.c.shape != (n,):
            raise DimensionError("c length must equal n")
        if self.A_eq.ncols != n or self.G.ncols != n:
            raise DimensionError("constraint matrices must have n columns")
        if self.b_eq.shape != (self.A_eq.nrows,) or self.h.shape != (self.G.nrows,):
            raise DimensionError("right-hand side length mismatch")
        if self.l.shape != (n,) or self.u.shape != (n,):
            raise DimensionError("bounds must have length n")
        if np.any(self.l > self.u):
            raise ValueError("l <= u must hold elementwise")
        _check_symmetric(self.P)
        _check_psd_probes(self.P)

    @property
    def n(self) -> int:
        return self.P.nrows

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P._csr @ x) + self.c @ x)


@dataclass(frozen=True)
class ConicQP:
    """Conic-form QP: minimize 0.5 x'Px + c'x  s.t.  Ax + s = b, s in cone."""

    P: SparseMatrix
    c: np.ndarray
    A: SparseMatrix
    b: np.ndarray
    cone: ConeSpec

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=np.float64))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))
        n = self.P.nrows
        if self.P.ncols != n or self.c.shape != (n,):
            raise DimensionError("P/c dimensions inconsistent")
        if self.A.ncols != n or self.b.shape != (self.A.nrows,):
            raise DimensionError("A/b dimensions inconsistent")
        if self.cone.m != self.A.nrows:
            raise DimensionError("cone size must equal row count of A")
        _check_symmetric(self.P)
        _check_psd_probes(self.P)

    @property
    def n(self) -> int:
        return self.P.nrows

    @property
    def m(self) -> int:
        return self.A.nrows

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P._csr @ x) + self.c @ x)


def to_conic(qp: StandardQP, equalities_as_inequalities: bool = False):
    """Transform a StandardQP into conic form.

    Equality rows map to the zero-cone block; inequality rows and finite
    bounds map to the nonnegative block (rows with infinite bounds are
    dropped). Returns (ConicQP, provenance) where provenance records each
    conic row's origin as ("eq"|"ineq"|"lb"|"ub", source_index).

    With equalities_as_inequalities=True each equality is encoded as a pair
    of opposing inequalities instead of a zero-cone row (strict-fidelity
    mode; provenance tags "eq+"/"eq-").
    """
    n = qp.n
    eye = sp.identity(n, format="csr")
    blocks = []
    rhs = []
    provenance = []

    if equalities_as_inequalities:
        m_zero = 0
        if qp.A_eq.nrows:
            blocks.append(qp.A_eq._csr)
            rhs.append(qp.b_eq)
            provenance.extend(("eq+", i) for i in range(qp.A_eq.nrows))
            blocks.append(-qp.A_eq._csr)
            rhs.append(-qp.b_eq)
            provenance.extend(("eq-", i) for i in range(qp.A_eq.nrows))
    else:
        m_zero = qp.A_eq.nrows
        if m_zero:
            blocks.append(qp.A_eq._csr)
            rhs.append(qp.b_eq)
            provenance.extend(("eq", i) for i in range(m_zero))

    if qp.G.nrows:
        blocks.append(qp.G._csr)
        rhs.append(qp.h)
        provenance.extend(("ineq", i) for i in range(qp.G.nrows))

    lb_rows = np.flatnonzero(np.isfinite(qp.l))
    if lb_rows.size:
        blocks.append(-eye[lb_rows])
        rhs.append(-qp.l[lb_rows])
        provenance.extend(("lb", int(i)) for i in lb_rows)

    ub_rows = np.flatnonzero(np.isfinite(qp.u))
    if ub_rows.size:
        blocks.append(eye[ub_rows])
        rhs.append(qp.u[ub_rows])
        provenance.extend(("ub", int(i)) for i in ub_rows)

    if blocks:
        A = SparseMatrix.from_scipy(sp.vstack(blocks, format="csr"))
        b = np.concatenate(rhs)
    else:
        A = SparseMatrix(0, n, np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64),
                         np.zeros(0))
        b = np.zeros(0)

    cone = ConeSpec(m_zero=m_zero, m_nonneg=A.nrows - m_zero)
    return ConicQP(P=qp.P, c=qp.c, A=A, b=b, cone=cone), provenance


@dataclass(frozen=True, eq=False)
class MonotoneData:
    """Assembled monotone-inclusion data for a conic QP.

    M has block structure [[P, A'], [-A, 0]], q = (c; b). sigma_max caches a
    spectral estimate for I+M used by step-size safeguards.
    """

    M: SparseMatrix
    I_plus_M: SparseMatrix
    q: np.ndarray
    cone: ConeSpec
    n: int
    m: int
    sigma_max: float
    cqp: ConicQP

    @property
    def size(self) -> int:
        return self.n + self.m


def assemble_inclusion(cqp: ConicQP) -> MonotoneData:
    """Build M, q, I+M and the cached spectral estimate for a conic QP."""
    n, m = cqp.n, cqp.m
    A = cqp.A._csr
    M_sp = sp.bmat([[cqp.P._csr, A.T], [-A, None]], format="csr")
    M = SparseMatrix.from_scipy(M_sp)
    I_plus_M = SparseMatrix.from_scipy(sp.identity(n + m, format="csr") + M_sp)
    q = np.concatenate([cqp.c, cqp.b])
    est = estimate_sigma_max(I_plus_M)
    return MonotoneData(M=M, I_plus_M=I_plus_M, q=q, cone=cqp.cone, n=n, m=m,
                        sigma_max=est.sigma_max, cqp=cqp)


def _nonneg_start(total: int, spec: ConeSpec) -> int:
    # u = (x; y): x block and zero-cone duals are free, nonneg-cone duals clip
    return total - spec.m_nonneg


def project_cone_dual(v: np.ndarray, spec: ConeSpec) -> np.ndarray:
    """Project u = (x; y) onto R^n x dual-cone: identity on free coordinates,
    max(0, .) on coordinates dual to the nonnegative block."""
    v = np.asarray(v, dtype=np.float64)
    out = v.copy()
    k = _nonneg_start(v.shape[0], spec)
    np.maximum(out[k:], 0.0, out=out[k:])
    return out


def project_cone_dual_rows(V: np.ndarray, n: int, spec: ConeSpec) -> np.ndarray:
    """Row-wise projection of an (n+m) x d channel array."""
    out = np.array(V, dtype=np.float64)
    k = _nonneg_start(n + spec.m, spec)
    np.maximum(out[k:], 0.0, out=out[k:])
    return out


@dataclass(frozen=True)
class QualityMetrics:
    objective: float
    max_eq_viol: float
    max_ineq_viol: float
    dual_residual_inf: float
    complementarity: float
    l2_to_reference: Optional[float] = None

    @property
    def max_viol(self) -> float:
        return max(self.max_eq_viol, self.max_ineq_viol)


def quality(cqp: ConicQP, x: np.ndarray, y: np.ndarray,
            reference: Optional[tuple[np.ndarray, np.ndarray]] = None) -> QualityMetrics:
    """KKT-based solution quality of a primal-dual pair (x, y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != (cqp.n,) or y.shape != (cqp.m,):
        raise DimensionError("quality: x/y dimension mismatch")
    s = cqp.b - cqp.A._csr @ x
    mz = cqp.cone.m_zero
    s_eq, s_in = s[:mz], s[mz:]
    max_eq = float(np.abs(s_eq).max()) if s_eq.size else 0.0
    max_in = float(np.abs(np.minimum(s_in, 0.0)).max()) if s_in.size else 0.0
    dual = cqp.P._csr @ x + cqp.A._csr.T @ y + cqp.c
    comp = float(abs(s_in @ y[mz:])) if s_in.size else 0.0
    l2 = None
    if reference is not None:
        xs, ys = reference
        l2 = float(math.sqrt(np.sum((x - xs) ** 2) + np.sum((y - ys) ** 2)))
    return QualityMetrics(
        objective=cqp.objective(x),
        max_eq_viol=max_eq,
        max_ineq_viol=max_in,
        dual_residual_inf=float(np.abs(dual).max()) if dual.size else 0.0,
        complementarity=comp,
        l2_to_reference=l2,
    )


# -- instance file format ---------------------------------------------------
#
# Text document (JSON) holding n, m1, m2', the five matrices as
# (offsets, indices, values) triplets, vectors, bounds with "inf"/"-inf"
# sentinels and optional reference labels. Floats round-trip bit-exactly
# through repr.

FORMAT_VERSION = 1


def _matrix_to_doc(A: SparseMatrix) -> dict:
    return {
        "nrows": A.nrows,
        "ncols": A.ncols,
        "offsets": A.indptr.tolist(),
        "indices": A.indices.tolist(),
        "values": A.values.tolist(),
    }


def _matrix_from_doc(doc: dict) -> SparseMatrix:
    return SparseMatrix(doc["nrows"], doc["ncols"], np.asarray(doc["offsets"]),
                        np.asarray(doc["indices"]), np.asarray(doc["values"]))


def _bounds_to_doc(v: np.ndarray) -> list:
    return ["inf" if x == INF else "-inf" if x == -INF else x for x in v.tolist()]


def _bounds_from_doc(lst: list) -> np.ndarray:
    return np.array([INF if x == "inf" else -INF if x == "-inf" else float(x)
                     for x in lst], dtype=np.float64)


def instance_to_doc(qp: StandardQP,
                    labels: Optional[tuple[np.ndarray, np.ndarray]] = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "n": qp.n,
        "m1": qp.A_eq.nrows,
        "m2": qp.G.nrows,
        "P": _matrix_to_doc(qp.P),
        "c": qp.c.tolist(),
        "A_eq": _matrix_to_doc(qp.A_eq),
        "b_eq": qp.b_eq.tolist(),
        "G": _matrix_to_doc(qp.G),
        "h": qp.h.tolist(),
        "l": _bounds_to_doc(qp.l),
        "u": _bounds_to_doc(qp.u),
        "labels": None if labels is None else {
            "x": labels[0].tolist(),
            "y": labels[1].tolist(),
        },
    }
    return doc


def instance_from_doc(doc: dict):
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported instance format version: {doc.get('format_version')!r}")
    qp = StandardQP(
        P=_matrix_from_doc(doc["P"]),
        c=np.asarray(doc["c"], dtype=np.float64),
        A_eq=_matrix_from_doc(doc["A_eq"]),
        b_eq=np.asarray(doc["b_eq"], dtype=np.float64),
        G=_matrix_from_doc(doc["G"]),
        h=np.asarray(doc["h"], dtype=np.float64),
        l=_bounds_from_doc(doc["l"]),
        u=_bounds_from_doc(doc["u"]),
    )
    labels = None
    if doc.get("labels") is not None:
        labels = (np.asarray(doc["labels"]["x"], dtype=np.float64),
                  np.asarray(doc["labels"]["y"], dtype=np.float64))
    return qp, labels


def write_instance(path, qp: StandardQP, labels=None) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_doc(qp, labels), fh, sort_keys=True)
        fh.write("\n")


def read_instance(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed instance file at line {exc.lineno}, "
                             f"column {exc.colno}: {exc.msg}") from exc
    return instance_from_doc(doc)
