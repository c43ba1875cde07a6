"""Seeded generators for the synthetic QP families, labeling, splits, and I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import (INF, StandardQP, SparseMatrix, assemble_inclusion, quality,
                    read_instance, to_conic, write_instance)
from .solvers import SolverConfig, dr_solve

QP_RHS = "qp_rhs"
QP_PERTURBED = "qp_perturbed"
PORTFOLIO = "portfolio"

FAMILIES = (QP_RHS, QP_PERTURBED, PORTFOLIO)


@dataclass(frozen=True)
class GenSpec:
    family: str
    count: int
    seed: int = 0
    n: Optional[int] = None      # QP families: variable count (even)
    k: Optional[int] = None      # portfolio: factor count
    perturbation: float = 0.1    # half-width for qp_perturbed factors
    margin: float = 1.0          # inequality feasibility margin

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.family in (QP_RHS, QP_PERTURBED):
            if self.n is None or self.n < 2 or self.n % 2:
                raise ValueError("QP families need even n >= 2")
        elif self.k is None or self.k < 1:
            raise ValueError("portfolio needs k >= 1")


@dataclass
class DatasetBundle:
    family: str
    instances: list
    labels: Optional[list]       # (x*, y*) per instance, or None per entry
    split: Optional[dict]        # {"train": idx, "val": idx, "test": idx}
    seed: int
    spec: Optional[GenSpec] = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.instances):
            raise ValueError("labels length must match instances")
        if self.split is not None:
            all_idx = np.concatenate([np.asarray(v, dtype=int)
                                      for v in self.split.values()])
            if len(set(all_idx.tolist())) != all_idx.size:
                raise ValueError("split sets must be disjoint")

    def __len__(self) -> int:
        return len(self.instances)


def _sparsify(rng, dense: np.ndarray, density: float = 0.5) -> np.ndarray:
    mask = rng.random(dense.shape) < density
    out = dense * mask
    # keep every row nonempty so constraints stay meaningful
    for i in range(out.shape[0]):
        if not out[i].any():
            j = rng.integers(out.shape[1])
            out[i, j] = dense[i, j] if dense[i, j] != 0 else 1.0
    return out


def _row_normalize(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return mat / norms


# Block scalings for the QP families.  Keeping sigma_max(I + M) close to 1
# puts a single exact-line-search gradient step close to the full resolvent
# solve, so the gradient-step solver tracks the splitting solver instead of
# trailing it by an order of magnitude.  Finite box bounds would reinsert
# identity rows into the conic constraint block and push sigma_max back
# above 1.8 regardless of scaling, so the QP families leave x unbounded.
_P_SCALE = 0.1
_A_SCALE = 0.15
# Linear-cost scale.  Half of _P_SCALE keeps the optimizer magnitudes modest
# (||u*|| a few units) so warm-start regression targets are well scaled,
# without touching sigma_max(I + M), which depends only on P and the
# constraint blocks.
_C_SCALE = 0.05
# Half-width of the witness-point box that parameterizes the equality RHS
# family.  It sets how far optimizers move across the family and therefore
# how hard the warm-start regression task is.
_RHS_HALFWIDTH = 0.3


def _qp_base(spec: GenSpec, rng):
    """Shared base instance for the QP families.

    P is diagonal with entries ~ U[0.5, 2] scaled by _P_SCALE; A_eq and G are
    50%-sparse Gaussians with rows normalized to length _A_SCALE
    (conditioning); x is unbounded. h is set so every x in [-0.5, 0.5]^n is
    strictly feasible, via the L1 bound |Gx| <= 0.5*|G|.sum(axis=1).
    """
    n = spec.n
    m1 = m2 = n // 2
    P = np.diag(rng.uniform(0.5, 2.0, n)) * _P_SCALE
    c = rng.standard_normal(n) * _C_SCALE
    A = _row_normalize(_sparsify(rng, rng.standard_normal((m1, n)))) * _A_SCALE
    G = _row_normalize(_sparsify(rng, rng.standard_normal((m2, n)))) * _A_SCALE
    h = 0.5 * np.abs(G).sum(axis=1) + spec.margin * _A_SCALE
    l = np.full(n, -np.inf)
    u = np.full(n, np.inf)
    return P, c, A, G, h, l, u


def _build_qp(P, c, A, b, G, h, l, u) -> StandardQP:
    return StandardQP(P=SparseMatrix.from_dense(P), c=c,
                      A_eq=SparseMatrix.from_dense(A), b_eq=b,
                      G=SparseMatrix.from_dense(G), h=h, l=l, u=u)


def gen_qp_rhs(spec: GenSpec) -> DatasetBundle:
    """Family parameterized only by the equality right-hand side.

    A single base instance per seed; each sample draws a witness point
    x0 uniform in the witness box and sets b_eq = A_eq x0, so every sample is feasible
    by construction and differs from the others only in b_eq.
    """
    rng = np.random.default_rng(spec.seed)
    P, c, A, G, h, l, u = _qp_base(spec, rng)
    instances = []
    for _ in range(spec.count):
        x0 = rng.uniform(-_RHS_HALFWIDTH, _RHS_HALFWIDTH, spec.n)
        instances.append(_build_qp(P, c, A, A @ x0, G, h, l, u))
    return DatasetBundle(family=QP_RHS, instances=instances, labels=None,
                         split=None, seed=spec.seed, spec=spec)


def gen_qp_perturbed(spec: GenSpec) -> DatasetBundle:
    """Family with every nonzero of the base data perturbed multiplicatively.

    Factors are U[1-w, 1+w] per nonzero; P stays diagonal with its diagonal
    floored at 1e-6 (PSD preserved), and b_eq is re-centered on a sampled
    witness point so feasibility survives the perturbation.
    """
    rng = np.random.default_rng(spec.seed)
    P, c, A, G, h, l, u = _qp_base(spec, rng)
    w = spec.perturbation
    instances = []
    for _ in range(spec.count):
        def fac(shape):
            return rng.uniform(1.0 - w, 1.0 + w, shape)
        Ps = P * np.where(P != 0, fac(P.shape), 1.0)
        Ps = 0.5 * (Ps + Ps.T)
        np.fill_diagonal(Ps, np.maximum(np.diag(Ps), 1e-6))
        cs = c * fac(c.shape)
        As = A * np.where(A != 0, fac(A.shape), 1.0)
        Gs = G * np.where(G != 0, fac(G.shape), 1.0)
        hs = h * fac(h.shape)
        x0 = rng.uniform(-_RHS_HALFWIDTH, _RHS_HALFWIDTH, spec.n)
        bs = As @ x0
        hs = np.maximum(hs, Gs @ x0 + 1e-3)  # witness stays strictly feasible
        instances.append(_build_qp(Ps, cs, As, bs, Gs, hs, l, u))
    return DatasetBundle(family=QP_PERTURBED, instances=instances, labels=None,
                         split=None, seed=spec.seed, spec=spec)


def gen_portfolio(spec: GenSpec) -> DatasetBundle:
    """Factor-model portfolio QPs over variables z = (x, y), x the holdings.

    Objective x'Dx + y'y - mu'x / gamma encoded as 0.5 z'Pz + c'z with
    P = 2 blkdiag(D, I_k), c = (-mu/gamma; 0); equalities y = F'x and
    1'x = 1; bounds x >= 0 with y free. gamma = 1.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.k
    n_assets = 10 * k
    nz = n_assets + k
    instances = []
    for _ in range(spec.count):
        F = _sparsify(rng, rng.standard_normal((n_assets, k)))
        D = rng.uniform(0.0, np.sqrt(k), n_assets)
        mu = rng.standard_normal(n_assets)
        P = np.diag(np.concatenate([2.0 * D, 2.0 * np.ones(k)]))
        c = np.concatenate([-mu, np.zeros(k)])
        A = np.zeros((k + 1, nz))
        A[:k, :n_assets] = F.T
        A[:k, n_assets:] = -np.eye(k)
        A[k, :n_assets] = 1.0
        b = np.zeros(k + 1)
        b[k] = 1.0
        G = np.zeros((0, nz))
        h = np.zeros(0)
        l = np.concatenate([np.zeros(n_assets), np.full(k, -INF)])
        u = np.full(nz, INF)
        instances.append(_build_qp(P, c, A, b, G, h, l, u))
    return DatasetBundle(family=PORTFOLIO, instances=instances, labels=None,
                         split=None, seed=spec.seed, spec=spec)


def generate(spec: GenSpec) -> DatasetBundle:
    return {QP_RHS: gen_qp_rhs, QP_PERTURBED: gen_qp_perturbed,
            PORTFOLIO: gen_portfolio}[spec.family](spec)


def label_bundle(bundle: DatasetBundle, tol_label: float = 1e-9,
                 max_iter: int = 500_000):
    """Label every instance with a high-accuracy reference solution.

    Returns (labeled bundle, exclusions), exclusions listing (index, status)
    for instances the reference solver failed to converge on. Failed
    instances keep a None label.
    """
    cfg = SolverConfig(tol_fixed_point=tol_label, max_iter=max_iter)
    labels = []
    exclusions = []
    for i, qp in enumerate(bundle.instances):
        cqp, _ = to_conic(qp)
        report = dr_solve(assemble_inclusion(cqp), cfg)
        if report.status == "converged":
            labels.append((report.x, report.y))
        else:
            labels.append(None)
            exclusions.append((i, report.status))
    return replace_labels(bundle, labels), exclusions


def replace_labels(bundle: DatasetBundle, labels: list) -> DatasetBundle:
    return DatasetBundle(family=bundle.family, instances=bundle.instances,
                         labels=labels, split=bundle.split, seed=bundle.seed,
                         spec=bundle.spec)


def split_bundle(bundle: DatasetBundle, sizes: tuple[int, int, int],
                 seed: int = 0) -> DatasetBundle:
    """Seeded disjoint train/val/test split."""
    n_train, n_val, n_test = sizes
    total = n_train + n_val + n_test
    if total > len(bundle):
        raise ValueError(f"split sizes {sizes} oversubscribe {len(bundle)} instances")
    perm = np.random.default_rng(seed).permutation(len(bundle))
    split = {
        "train": np.sort(perm[:n_train]).tolist(),
        "val": np.sort(perm[n_train:n_train + n_val]).tolist(),
        "test": np.sort(perm[n_train + n_val:total]).tolist(),
    }
    return DatasetBundle(family=bundle.family, instances=bundle.instances,
                         labels=bundle.labels, split=split, seed=bundle.seed,
                         spec=bundle.spec)


def _instance_name(i: int) -> str:
    return f"instance_{i:04d}.json"


def write_bundle(bundle: DatasetBundle, path) -> None:
    """One JSON file per instance plus a manifest with split membership."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, qp in enumerate(bundle.instances):
        labels = bundle.labels[i] if bundle.labels is not None else None
        write_instance(path / _instance_name(i), qp, labels)
    manifest = {
        "format_version": 1,
        "family": bundle.family,
        "seed": bundle.seed,
        "count": len(bundle),
        "spec": None if bundle.spec is None else {
            "family": bundle.spec.family, "count": bundle.spec.count,
            "seed": bundle.spec.seed, "n": bundle.spec.n, "k": bundle.spec.k,
            "perturbation": bundle.spec.perturbation, "margin": bundle.spec.margin,
        },
        "split": bundle.split,
        "instances": [
            {"file": _instance_name(i),
             "labeled": bool(bundle.labels is not None and bundle.labels[i] is not None),
             "split": _membership(bundle.split, i)}
            for i in range(len(bundle))
        ],
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _membership(split: Optional[dict], i: int) -> Optional[str]:
    if split is None:
        return None
    for name, idx in split.items():
        if i in idx:
            return name
    return None


def read_bundle(path) -> DatasetBundle:
    path = Path(path)
    with open(path / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != 1:
        raise ValueError("unsupported manifest version")
    instances = []
    labels = []
    for entry in manifest["instances"]:
        qp, lab = read_instance(path / entry["file"])
        instances.append(qp)
        labels.append(lab)
    spec = None
    if manifest.get("spec") is not None:
        spec = GenSpec(**manifest["spec"])
    any_labels = any(lab is not None for lab in labels)
    return DatasetBundle(family=manifest["family"], instances=instances,
                         labels=labels if any_labels else None,
                         split=manifest.get("split"), seed=manifest["seed"],
                         spec=spec)


def check_labels(bundle: DatasetBundle, tol: float) -> list:
    """KKT residuals of the stored labels; returns QualityMetrics per instance."""
    out = []
    for qp, lab in zip(bundle.instances, bundle.labels):
        if lab is None:
            out.append(None)
            continue
        cqp, _ = to_conic(qp)
        out.append(quality(cqp, lab[0], lab[1]))
    return out
