"""Runnable studies: random-subspace baselines, the chance-level check, and
exact-vs-sketched overlap curves on planted operators.

The baseline study draws random subspace or mask pairs over a grid of
dimensions and sparsity ratios and tabulates the distribution of every
requested normalized similarity, reproducing the empirical chance levels the
overlap analysis is judged against.  The overlap curve study runs the full
pipeline on a planted operator: magnitude masks from a parameter vector,
exact overlap from a dense eigendecomposition, sketched overlap from the
truncated sketched eigendecomposition, and the k/D chance level.
"""

import csv
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grassmann import (MetricKind, OrthonormalBasis, metric, overlap,
                        principal_angles, similarity, stiefel_from_rng)
from .masks import mask_basis, mask_from_rng, topk_magnitude_mask, mask_eigenspace_overlap
from .operators import eigh_by_magnitude
from .sketch import draw_measurements, seigh, truncate

__all__ = [
    "MODALITIES",
    "BaselineRow",
    "BaselineResult",
    "CurvePoint",
    "OverlapCurve",
    "LemmaCheck",
    "rho_to_k",
    "run_baseline",
    "verify_lemma",
    "ranked_theta",
    "overlap_curve",
    "overlap_ratio_report",
]

logger = logging.getLogger(__name__)

# pair modalities: O = uniform orthonormal basis, M = uniform sparse mask
MODALITIES = ("OO", "OM", "MM")

# beyond this dimension the dense exact oracle is skipped
DENSE_ORACLE_MAX_DIM = 4000


def rho_to_k(dim, rho):
    """Sparsity ratio to rank: k = max(1, round(rho * D)), half away from zero."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    return max(1, int(np.floor(rho * dim + 0.5)))


@dataclass(frozen=True)
class BaselineRow:
    modality: str
    metric: str
    dim: int
    k: int
    rho: float
    samples: int
    median: float
    p5: float
    p95: float
    mean: float
    std: float


@dataclass
class BaselineResult:
    """Distribution statistics for every (D, rho, metric, modality) cell."""

    rows: list
    seed: int

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="ascii") as fh:
            fh.write(f"# seed={self.seed}\n")
            writer = csv.writer(fh)
            writer.writerow(["modality", "metric", "D", "k", "rho", "T",
                             "median", "p5", "p95", "mean", "std"])
            for r in self.rows:
                writer.writerow([r.modality, r.metric, r.dim, r.k, repr(r.rho),
                                 r.samples, repr(r.median), repr(r.p5),
                                 repr(r.p95), repr(r.mean), repr(r.std)])

    def cell(self, modality, kind, dim, rho):
        kind = kind.value if isinstance(kind, MetricKind) else kind
        for r in self.rows:
            if (r.modality, r.metric, r.dim) == (modality, kind, dim) and r.rho == rho:
                return r
        raise KeyError(f"no cell ({modality}, {kind}, D={dim}, rho={rho})")


def _draw_one(letter, rng, dim, k):
    if letter == "O":
        return stiefel_from_rng(rng, dim, k)
    return mask_basis(mask_from_rng(rng, dim, k))


def run_baseline(dim_grid, rho_grid, modalities, metrics, samples, seed):
    """Sample similarity distributions over the requested grid.

    Every (D, rho, metric, modality) cell draws its own ``samples``
    independent pairs from a dedicated child stream of ``seed``, so cells are
    independent jobs and the whole result is reproducible bit for bit.
    """
    dim_grid = [int(d) for d in dim_grid]
    rho_grid = [float(r) for r in rho_grid]
    metrics = [MetricKind(m) for m in metrics]
    modalities = [str(m) for m in modalities]
    if not dim_grid or not rho_grid or not metrics or not modalities:
        raise ValueError("all grids must be nonempty")
    for m in modalities:
        if m not in MODALITIES:
            raise ValueError(f"unknown modality {m!r}; choose from {MODALITIES}")
    samples = int(samples)
    if samples < 2:
        raise ValueError("need at least 2 samples per cell")

    cells = [(d, rho, kind, modality)
             for d in dim_grid for rho in rho_grid
             for kind in metrics for modality in modalities]
    streams = np.random.SeedSequence(seed).spawn(len(cells))

    rows = []
    for (dim, rho, kind, modality), stream in zip(cells, streams):
        rng = np.random.default_rng(stream)
        k = rho_to_k(dim, rho)
        values = np.empty(samples)
        for t in range(samples):
            b1 = _draw_one(modality[0], rng, dim, k)
            b2 = _draw_one(modality[1], rng, dim, k)
            if kind is MetricKind.OVERLAP:
                values[t] = overlap(b1, b2)
            else:
                values[t] = similarity(kind, metric(kind, principal_angles(b1, b2)), k)
        p5, median, p95 = np.percentile(values, [5.0, 50.0, 95.0])
        rows.append(BaselineRow(
            modality=modality, metric=kind.value, dim=dim, k=k, rho=rho,
            samples=samples, median=float(median), p5=float(p5), p95=float(p95),
            mean=float(np.mean(values)), std=float(np.std(values, ddof=1)),
        ))
    return BaselineResult(rows=rows, seed=int(seed))


class LemmaCheck(NamedTuple):
    mean: float
    stderr: float
    passed: bool


def verify_lemma(dim, k, samples, seed):
    """Monte Carlo check that mean overlap of uniform subspace pairs is k/D.

    Passes when the sample mean falls within four standard errors of k/D
    (plus a 1e-12 absolute guard for the k = D corner, where every sample is
    1 up to rounding and the standard error collapses to zero).
    """
    samples = int(samples)
    if samples < 30:
        raise ValueError("need at least 30 samples for a meaningful standard error")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    values = np.empty(samples)
    for t in range(samples):
        values[t] = overlap(stiefel_from_rng(rng, dim, k),
                            stiefel_from_rng(rng, dim, k))
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / np.sqrt(samples))
    passed = abs(mean - k / dim) <= 4.0 * stderr + 1e-12
    return LemmaCheck(mean=mean, stderr=stderr, passed=passed)


def ranked_theta(dim, priority, seed):
    """Random parameter vector whose magnitude ranking starts with ``priority``.

    Distinct magnitudes are drawn, sorted descending, and assigned to the
    priority indices first, so the top-k magnitude mask equals the first k
    priority indices for every k up to len(priority).
    """
    dim = int(dim)
    priority = np.asarray(priority, dtype=np.int64).ravel()
    if len(np.unique(priority)) != len(priority):
        raise ValueError("priority indices must be distinct")
    rng = np.random.default_rng(seed)
    magnitudes = np.sort(np.abs(rng.standard_normal(dim)))[::-1]
    signs = rng.choice([-1.0, 1.0], size=dim)
    rest = np.setdiff1d(np.arange(dim), priority, assume_unique=False)
    order = np.concatenate([priority, rest])
    theta = np.empty(dim)
    theta[order] = magnitudes * signs
    return theta


@dataclass(frozen=True)
class CurvePoint:
    k: int
    exact: float  # may be nan when the dense oracle was skipped
    sketched: float
    baseline: float


@dataclass
class OverlapCurve:
    """Exact and sketched mask/eigenspace overlap per k, with chance level."""

    points: list
    operator: str
    n_outer: int
    n_inner: int
    seed: int

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="ascii") as fh:
            fh.write(f"# seed={self.seed} n_outer={self.n_outer} "
                     f"n_inner={self.n_inner} operator={self.operator}\n")
            writer = csv.writer(fh)
            writer.writerow(["k", "exact", "sketched", "baseline", "ratio"])
            for p in self.points:
                exact = "" if np.isnan(p.exact) else repr(p.exact)
                writer.writerow([p.k, exact, repr(p.sketched), repr(p.baseline),
                                 repr(p.sketched / p.baseline)])


def overlap_curve(op, theta, n_outer, n_inner, k_max, seed,
                  dense_max_dim=DENSE_ORACLE_MAX_DIM):
    """Exact and sketched mask/eigenspace overlap for k = 1 .. k_max.

    Per k the mask is the top-k magnitude mask of ``theta``; the exact value
    uses a dense eigendecomposition of the operator (skipped with a warning
    above ``dense_max_dim``), the sketched value the rank-k truncation of one
    sketched eigendecomposition shared by all k.
    """
    dim = op.rows
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.size != dim:
        raise ValueError(f"theta length {theta.size} != operator dimension {dim}")
    if not 1 <= k_max <= n_outer:
        raise ValueError(f"need 1 <= k_max <= n_outer, got k_max={k_max}")

    ensemble = draw_measurements(dim, n_inner, n_outer, seed)
    decomposition = seigh(op, ensemble)

    exact_basis = None
    if dim <= dense_max_dim:
        _, vectors = eigh_by_magnitude(_materialize(op))
        exact_basis = vectors
    else:
        logger.warning(
            "dimension %d exceeds the dense-oracle cap %d; "
            "exact overlap column will be empty", dim, dense_max_dim,
        )

    points = []
    for k in range(1, k_max + 1):
        mask = topk_magnitude_mask(theta, k)
        sketched_basis = truncate(decomposition, k).eigenbasis()
        sketched = mask_eigenspace_overlap(mask, sketched_basis, k)
        if exact_basis is not None:
            basis_k = OrthonormalBasis(exact_basis[:, :k], check=False)
            exact = mask_eigenspace_overlap(mask, basis_k, k)
        else:
            exact = float("nan")
        points.append(CurvePoint(k=k, exact=exact, sketched=sketched,
                                 baseline=k / dim))
    descriptor = f"{type(op).__name__}(dim={dim})"
    return OverlapCurve(points=points, operator=descriptor,
                        n_outer=int(n_outer), n_inner=int(n_inner), seed=int(seed))


def _materialize(op):
    if hasattr(op, "materialize"):
        return op.materialize()
    if hasattr(op, "matrix"):
        return op.matrix
    return op.apply(np.eye(op.cols))


def overlap_ratio_report(curve, column="sketched"):
    """(k, overlap/baseline) rows; the factor above chance level per k."""
    rows = []
    for p in curve.points:
        value = getattr(p, column)
        rows.append((p.k, value / p.baseline))
    return rows
