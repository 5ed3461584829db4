"""Principal angles and subspace similarity over column-orthonormal bases.

A rank-k subspace of R^D is represented by any D-by-k matrix with orthonormal
columns; every quantity here depends on the column span only (right-rotation
invariant).  The distance family is computed from the principal angles, the
nondecreasing vector sigma in [0, pi/2]^k obtained from the singular values of
Q1^T Q2.  Each distance comes with its analytic maximum, which normalizes it
into a [0, 1] similarity; the overlap similarity needs no normalization and
has the closed-form chance level k/D for uniformly random subspaces.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ContractViolation

__all__ = [
    "OrthonormalBasis",
    "PrincipalAngles",
    "MetricKind",
    "metric_max",
    "principal_angles",
    "metric",
    "similarity",
    "overlap",
    "sample_stiefel",
    "overlap_baseline",
    "load_basis",
    "metric_rows",
    "write_metric_csv",
]

ORTHONORMAL_ATOL = 1e-10

# angles this close to pi/2 force the Fubini-Study distance to its maximum
# (the cosine product underflows long before this threshold matters)
_RIGHT_ANGLE_TOL = 1e-12

_SVAL_EXCESS_TOL = 1e-8


class OrthonormalBasis:
    """A D-by-k real matrix with orthonormal columns."""

    def __init__(self, columns, check=True):
        columns = np.ascontiguousarray(columns, dtype=np.float64)
        if columns.ndim != 2:
            raise ValueError("basis columns must form a 2-d array")
        dim, rank = columns.shape
        if not 1 <= rank <= dim:
            raise ValueError(f"need 1 <= rank <= dim, got rank={rank}, dim={dim}")
        if check:
            gram_err = np.abs(columns.T @ columns - np.eye(rank)).max()
            # inverted comparison so non-finite columns fail too
            if not gram_err <= ORTHONORMAL_ATOL:
                raise ContractViolation(
                    f"columns are not orthonormal (max Gram deviation {gram_err:.3e})"
                )
        self.columns = columns

    @property
    def dim(self):
        return self.columns.shape[0]

    @property
    def rank(self):
        return self.columns.shape[1]

    def __repr__(self):
        return f"OrthonormalBasis(dim={self.dim}, rank={self.rank})"


@dataclass(frozen=True)
class PrincipalAngles:
    """Nondecreasing angles in [0, pi/2] between two equal-rank subspaces."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64).ravel()
        if sigma.size < 1:
            raise ValueError("need at least one angle")
        if np.any(sigma[:-1] > sigma[1:]):
            raise ValueError("angles must be nondecreasing")
        if sigma[0] < 0.0 or sigma[-1] > np.pi / 2 + 1e-12:
            raise ValueError("angles must lie in [0, pi/2]")
        object.__setattr__(self, "sigma", sigma)

    @property
    def k(self):
        return len(self.sigma)


class MetricKind(Enum):
    """The supported subspace distance/similarity kinds.

    All but OVERLAP are distances (0 for identical spans); OVERLAP is already
    a similarity in [0, 1].
    """

    GEODESIC = "geodesic"
    CHORDAL_2 = "chordal2"
    CHORDAL_F = "chordalF"
    PROJECTION_2 = "proj2"
    PROJECTION_F = "projF"
    FUBINI_STUDY = "fubini_study"
    OVERLAP = "overlap"


def metric_max(kind, k):
    """Analytic maximum of a metric over rank-k subspace pairs."""
    if k < 1:
        raise ValueError("rank must be positive")
    if kind is MetricKind.GEODESIC:
        return np.sqrt(k) * np.pi / 2
    if kind is MetricKind.CHORDAL_2:
        return np.sqrt(2.0)
    if kind is MetricKind.CHORDAL_F:
        return np.sqrt(2.0 * k)
    if kind is MetricKind.PROJECTION_2:
        return 1.0
    if kind is MetricKind.PROJECTION_F:
        return np.sqrt(k)
    if kind is MetricKind.FUBINI_STUDY:
        return np.pi / 2
    if kind is MetricKind.OVERLAP:
        return 1.0
    raise TypeError(f"unknown metric kind: {kind!r}")


def _check_pair(b1, b2):
    if b1.dim != b2.dim:
        raise ValueError(f"ambient dimensions differ: {b1.dim} vs {b2.dim}")
    if b1.rank != b2.rank:
        raise ValueError(
            f"ranks differ ({b1.rank} vs {b2.rank}); comparing subspaces of "
            "different dimension is unsupported"
        )


def principal_angles(b1, b2):
    """Principal angles between two equal-rank orthonormal bases.

    The singular values of ``b1.columns^T b2.columns`` are the angle cosines;
    they are clipped into [0, 1] before arccos since rounding can push them a
    few ulp past 1.  An excess beyond 1e-8 indicates a non-orthonormal input
    and raises.
    """
    _check_pair(b1, b2)
    svals = np.linalg.svd(b1.columns.T @ b2.columns, compute_uv=False)
    if svals[0] > 1.0 + _SVAL_EXCESS_TOL:
        raise ContractViolation(
            f"cosine {svals[0]!r} exceeds 1 beyond rounding; inputs are not orthonormal"
        )
    svals = np.clip(svals, 0.0, 1.0)
    # svals are nonincreasing, so the angles come out nondecreasing
    return PrincipalAngles(np.arccos(svals))


def metric(kind, angles):
    """Evaluate one metric from precomputed principal angles."""
    sigma = angles.sigma
    if kind is MetricKind.GEODESIC:
        return float(np.linalg.norm(sigma))
    if kind is MetricKind.CHORDAL_2:
        return float(np.max(2.0 * np.sin(sigma / 2.0)))
    if kind is MetricKind.CHORDAL_F:
        return float(np.linalg.norm(2.0 * np.sin(sigma / 2.0)))
    if kind is MetricKind.PROJECTION_2:
        return float(np.max(np.sin(sigma)))
    if kind is MetricKind.PROJECTION_F:
        return float(np.linalg.norm(np.sin(sigma)))
    if kind is MetricKind.FUBINI_STUDY:
        if np.any(sigma >= np.pi / 2 - _RIGHT_ANGLE_TOL):
            return float(np.pi / 2)
        # product of cosines in log space; exp underflow saturates at pi/2
        return float(np.arccos(np.exp(np.sum(np.log(np.cos(sigma))))))
    if kind is MetricKind.OVERLAP:
        return float(np.sum(np.cos(sigma) ** 2) / len(sigma))
    raise TypeError(f"unknown metric kind: {kind!r}")


def similarity(kind, value, k):
    """Normalize a metric value into [0, 1], 1 meaning identical spans.

    Distances map through 1 - value/max(kind, k); overlap passes through
    unchanged.
    """
    top = metric_max(kind, k)
    if not -1e-12 <= value <= top + 1e-12:
        raise ValueError(f"{kind.value} value {value!r} outside [0, {top!r}]")
    if kind is MetricKind.OVERLAP:
        return float(min(max(value, 0.0), 1.0))
    return float(min(max(1.0 - value / top, 0.0), 1.0))


def overlap(b1, b2):
    """Rotation-invariant span similarity |Q1^T Q2|_F^2 / k, in [0, 1].

    Computed directly from the product, no SVD involved; equals the mean
    squared cosine of the principal angles.
    """
    _check_pair(b1, b2)
    if b1.rank == b1.dim:
        # two full-dimensional spans are the whole space; skip the product,
        # whose rounding would blur the exact answer
        return 1.0
    prod = b1.columns.T @ b2.columns
    return float(np.sum(prod * prod) / b1.rank)


def stiefel_from_rng(rng, dim, k):
    """Haar-uniform orthonormal basis drawn from an existing Generator."""
    if not 1 <= k <= dim:
        raise ValueError(f"need 1 <= k <= dim, got k={k}, dim={dim}")
    G = rng.standard_normal((dim, k))
    Q, R = np.linalg.qr(G)
    # sign-correct with diag(R) so the distribution is exactly Haar
    d = np.diag(R)
    Q = Q * np.sign(np.where(d == 0, 1.0, d))
    return OrthonormalBasis(Q, check=False)


def sample_stiefel(dim, k, seed):
    """Haar-uniform orthonormal basis; deterministic per seed."""
    return stiefel_from_rng(np.random.default_rng(seed), dim, k)


def overlap_baseline(dim, k):
    """Expected overlap of two independent uniform rank-k subspaces: k/D."""
    if not 1 <= k <= dim:
        raise ValueError(f"need 1 <= k <= dim, got k={k}, dim={dim}")
    return k / dim


def load_basis(source):
    """Load a column-orthonormal basis from a chunked or merged matrix store."""
    from . import storage

    return OrthonormalBasis(storage.read_matrix(source))


def metric_rows(kinds, b1, b2):
    """Evaluate a batch of metrics on one subspace pair.

    Returns (kind name, dim, rank, raw value, similarity) tuples; the
    principal angles are computed once and shared.
    """
    kinds = [MetricKind(k) for k in kinds]
    angles = None
    rows = []
    for kind in kinds:
        if kind is MetricKind.OVERLAP:
            value = overlap(b1, b2)
        else:
            if angles is None:
                angles = principal_angles(b1, b2)
            value = metric(kind, angles)
        rows.append((kind.value, b1.dim, b1.rank, value,
                     similarity(kind, value, b1.rank)))
    return rows


def write_metric_csv(path, rows):
    """Write (kind, D, k, value, similarity) rows as CSV."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("kind,D,k,value,similarity\n")
        for kind, dim, k, value, sim in rows:
            fh.write(f"{kind},{dim},{k},{float(value)!r},{float(sim)!r}\n")
