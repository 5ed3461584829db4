"""Batch command-line interface.

Subcommands: ``decompose`` (sketched eigendecomposition of a planted or
stored operator), ``baseline`` (random-subspace similarity grids),
``curve`` (exact vs sketched overlap on a planted operator), ``verify``
(built-in self tests) and ``store create/merge/verify`` (matrix store
management).  Every run is deterministic given its resolved configuration,
which is written as ``config.json`` next to the outputs; nothing is written
outside the chosen output directory.

Exit codes: 0 success, 1 usage error, 2 numerical-contract failure, 3 I/O.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments, sketch, storage
from .errors import ContractViolation, IntegrityError
from .grassmann import (MetricKind, metric, overlap, principal_angles,
                        sample_stiefel)
from .masks import SparseMask, hamming, iou, mask_basis, sample_mask
from .operators import DenseOperator, make_planted_operator
from .sketch import draw_measurements, seigh

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONTRACT = 2
EXIT_IO = 3

OUTPUT_DIR_ENV = "GRASSKET_OUTPUT_DIR"

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _float_list(text):
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _out_dir(args):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out, args):
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    for key, value in list(resolved.items()):
        if isinstance(value, Path):
            resolved[key] = str(value)
    (out / "config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n",
        encoding="utf-8",
    )


def _planted_from_args(args):
    rank = args.planted_rank
    if args.eigvals is not None:
        eigvals = np.asarray(_float_list(args.eigvals))
        rank = len(eigvals)
    else:
        if rank is None:
            raise ValueError("either --planted-rank or --eigvals is required")
        eigvals = np.arange(rank, 0, -1, dtype=np.float64)
    if args.mask_indices is not None:
        mask = SparseMask(args.planted_dim, _int_list(args.mask_indices))
    else:
        mask = SparseMask(args.planted_dim, np.arange(rank))
    op = make_planted_operator(args.planted_dim, eigvals, mask,
                               args.planted_alignment, args.planted_seed)
    return op, mask


def _resolve_n_inner(args):
    if args.n_inner is None:
        return sketch.default_inner_count(args.n_outer)
    return args.n_inner


def cmd_decompose(args):
    out = _out_dir(args)
    if args.dense_store is not None:
        matrix = storage.read_matrix(args.dense_store)
        scale = max(1.0, float(np.abs(matrix).max()))
        if np.abs(matrix - matrix.T).max() > 1e-10 * scale:
            raise ContractViolation("stored matrix is not symmetric")
        op = DenseOperator(matrix, hermitian=True)
    else:
        if args.planted_dim is None:
            raise ValueError("provide --dense-store or --planted-dim")
        op, _ = _planted_from_args(args)
    n_inner = _resolve_n_inner(args)
    ensemble = draw_measurements(op.rows, n_inner, args.n_outer, args.seed)

    _write_config(out, args)
    decomposition = seigh(op, ensemble)
    sketch.save_sketched_eigh(
        decomposition, out / "decomposition",
        metadata={"n_inner": n_inner, "n_outer": args.n_outer, "seed": args.seed},
    )
    with open(out / "eigvals.csv", "w", encoding="ascii") as fh:
        fh.write(f"# seed={args.seed} n_outer={args.n_outer} n_inner={n_inner}\n")
        fh.write("index,eigval\n")
        for i, value in enumerate(decomposition.eigvals):
            fh.write(f"{i},{float(value)!r}\n")
    logger.info("decomposition written to %s", out)
    return EXIT_OK


def cmd_baseline(args):
    out = _out_dir(args)
    metrics = [MetricKind(m) for m in args.metrics.split(",") if m.strip()]
    modalities = [m.strip() for m in args.modalities.split(",") if m.strip()]
    _write_config(out, args)
    result = experiments.run_baseline(
        _int_list(args.dims), _float_list(args.rhos), modalities, metrics,
        samples=args.samples, seed=args.seed,
    )
    result.write_csv(out / "baseline.csv")
    logger.info("baseline grid written to %s", out / "baseline.csv")
    return EXIT_OK


def cmd_curve(args):
    out = _out_dir(args)
    op, mask = _planted_from_args(args)
    n_inner = _resolve_n_inner(args)
    k_max = args.top_k if args.top_k is not None else min(args.n_outer, mask.k)
    theta = experiments.ranked_theta(op.rows, mask.indices, args.theta_seed)
    _write_config(out, args)
    curve = experiments.overlap_curve(op, theta, args.n_outer, n_inner,
                                      k_max, args.seed)
    curve.write_csv(out / "curve.csv")
    with open(out / "ratio.csv", "w", encoding="ascii") as fh:
        fh.write("k,ratio\n")
        for k, ratio in experiments.overlap_ratio_report(curve):
            fh.write(f"{k},{ratio!r}\n")
    logger.info("overlap curve written to %s", out / "curve.csv")
    return EXIT_OK


def _check(report, name, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    print(line)
    report.append(line)
    return 0 if passed else 1


def cmd_verify(args):
    out = _out_dir(args)
    _write_config(out, args)
    report = []
    failures = 0

    for dim, k in ((128, 6), (512, 26), (2048, 102)):
        check = experiments.verify_lemma(dim, k, args.samples, args.seed)
        failures += _check(
            report, f"chance-level overlap D={dim} k={k}", check.passed,
            f"mean={check.mean:.6f} expected={k / dim:.6f} stderr={check.stderr:.2e}",
        )

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    ok = True
    for trial in range(500):
        dim = 64 if trial % 2 == 0 else 1024
        k = int(rng.integers(1, 17))
        m1 = sample_mask(dim, k, int(rng.integers(2**32)))
        m2 = sample_mask(dim, k, int(rng.integers(2**32)))
        ov = overlap(mask_basis(m1), mask_basis(m2))
        via_iou = 2.0 * iou(m1, m2) / (1.0 + iou(m1, m2))
        via_flips = 1.0 - hamming(m1, m2) / (2.0 * k)
        worst = max(worst, abs(ov - via_iou), abs(ov - via_flips))
        ok = ok and worst <= 1e-12
    failures += _check(report, "mask metric bijections (500 pairs)", ok,
                       f"max deviation {worst:.2e}")

    worst = 0.0
    for trial in range(200):
        b1 = sample_stiefel(48, 6, int(rng.integers(2**32)))
        b2 = sample_stiefel(48, 6, int(rng.integers(2**32)))
        proj = metric(MetricKind.PROJECTION_F, principal_angles(b1, b2))
        worst = max(worst, abs(overlap(b1, b2) - (1.0 - proj**2 / 6)))
    failures += _check(report, "overlap/projection bijection (200 pairs)",
                       worst <= 1e-10, f"max deviation {worst:.2e}")

    store_dir = out / "selftest.store"
    data = rng.standard_normal((64, 13))
    data[0, 0] = 5e-324  # subnormal
    data[1, 0] = -0.0
    store = storage.create_layout(store_dir, 64, 13, chunk_cols=4, overwrite=True)
    storage.write_columns(store, 0, data)
    round_trip = storage.read_columns(store, 0, 13)
    chunk_ok = np.array_equal(round_trip, data) and np.signbit(round_trip[1, 0])
    failures += _check(report, "store chunked round trip", bool(chunk_ok))
    merged_a = storage.merge(store, out / "selftest-a.mx", overwrite=True)
    merged_b = storage.merge(store, out / "selftest-b.mx", overwrite=True)
    merged_ok = np.array_equal(storage.read_matrix(merged_a), data)
    idempotent = (out / "selftest-a.mx").read_bytes() == (out / "selftest-b.mx").read_bytes()
    failures += _check(report, "store merged round trip", bool(merged_ok))
    failures += _check(report, "store merge idempotence", idempotent)

    (out / "verify_report.txt").write_text("\n".join(report) + "\n", encoding="ascii")
    print(f"{len(report) - failures}/{len(report)} checks passed")
    return min(failures, 255)


def cmd_store_create(args):
    store = storage.create_layout(args.path, args.rows, args.cols,
                                  args.chunk_cols, overwrite=args.overwrite)
    if args.fill_seed is not None:
        storage.fill_gaussian(store, args.fill_seed)
    logger.info("store created at %s (%d chunks)", args.path, len(store.chunks))
    return EXIT_OK


def cmd_store_merge(args):
    store = storage.open_store(args.path)
    storage.merge(store, args.out, overwrite=args.overwrite)
    logger.info("merged %s into %s", args.path, args.out)
    return EXIT_OK


def cmd_store_verify(args):
    issues = storage.verify_store(args.path)
    handle = None
    if not issues:
        handle = storage.open_any(args.path)
        seed = handle.metadata.get("fill_seed")
        if handle.metadata.get("fill") == "gaussian" and seed is not None:
            issues.extend(_verify_gaussian_content(handle, int(seed)))
    for issue in issues:
        print(f"[FAIL] {issue}")
    if not issues:
        print("[PASS] store verified")
    return min(len(issues), 255)


def _verify_gaussian_content(handle, seed):
    """Regenerate seeded fill data and compare, reporting mismatch locations."""
    issues = []
    rng = np.random.default_rng(seed)
    if isinstance(handle, storage.ChunkedMatrixStore):
        spans = [(spec.col_start, spec.width, spec.file) for spec in handle.chunks]
    else:
        chunk_cols = int(handle.metadata.get("source_chunk_cols", handle.cols))
        spans = [(start, min(chunk_cols, handle.cols - start),
                  f"columns [{start}, {min(start + chunk_cols, handle.cols)})")
                 for start in range(0, handle.cols, chunk_cols)]
    for start, width, label in spans:
        expected = rng.standard_normal((handle.rows, width))
        actual = storage.read_columns(handle, start, width)
        if not np.array_equal(actual, expected):
            issues.append(f"content mismatch in {label}")
    return issues


def build_parser():
    parser = _Parser(prog="grassket",
                     description="Sketched eigendecompositions, subspace metrics "
                                 "and mask/eigenspace overlap studies.")
    sub = parser.add_subparsers(dest="command", required=True)
    default_out = os.environ.get(OUTPUT_DIR_ENV, "grassket-out")

    def add_common(p):
        p.add_argument("--output-dir", default=default_out,
                       help=f"output directory (default: ${OUTPUT_DIR_ENV} or grassket-out)")
        p.add_argument("--seed", type=int, default=0, help="run seed")

    def add_planted(p):
        p.add_argument("--planted-dim", type=int, default=None,
                       help="ambient dimension of the planted operator")
        p.add_argument("--planted-rank", type=int, default=None,
                       help="planted rank (eigenvalues default to rank..1)")
        p.add_argument("--eigvals", default=None,
                       help="comma-separated planted eigenvalues (overrides rank)")
        p.add_argument("--planted-alignment", type=float, default=0.0,
                       help="mask/eigenspace alignment in [0, 1]")
        p.add_argument("--planted-seed", type=int, default=0,
                       help="seed of the planted basis")
        p.add_argument("--mask-indices", default=None,
                       help="comma-separated target mask (default: 0..rank-1)")

    p = sub.add_parser("decompose", help="sketched eigendecomposition", parents=[])
    add_common(p)
    add_planted(p)
    p.add_argument("--dense-store", default=None,
                   help="path of a stored dense symmetric matrix to decompose")
    p.add_argument("--n-outer", type=int, required=True,
                   help="number of outer measurements (recovered rank)")
    p.add_argument("--n-inner", type=int, default=None,
                   help="number of inner measurements (default 2*n_outer + 1)")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("baseline", help="random-subspace similarity grid")
    add_common(p)
    p.add_argument("--dims", default="2048", help="comma-separated dimensions")
    p.add_argument("--rhos", default="0.4,0.2,0.05",
                   help="comma-separated sparsity ratios")
    p.add_argument("--modalities", default="OO",
                   help="comma-separated pair modalities (OO, OM, MM)")
    p.add_argument("--metrics", default="overlap",
                   help="comma-separated metric kinds "
                        "(overlap, geodesic, chordal2, chordalF, proj2, projF, fubini_study)")
    p.add_argument("--samples", type=int, default=50, help="pairs per cell")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("curve", help="exact vs sketched overlap curve")
    add_common(p)
    add_planted(p)
    p.add_argument("--n-outer", type=int, required=True)
    p.add_argument("--n-inner", type=int, default=None)
    p.add_argument("--top-k", type=int, default=None,
                   help="largest mask size (default min(n_outer, planted rank))")
    p.add_argument("--theta-seed", type=int, default=1,
                   help="seed of the synthetic parameter vector")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("verify", help="run built-in self tests")
    add_common(p)
    p.add_argument("--samples", type=int, default=200,
                   help="Monte Carlo samples for the chance-level checks")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("store", help="matrix store management")
    store_sub = p.add_subparsers(dest="store_command", required=True)

    c = store_sub.add_parser("create", help="allocate (and optionally fill) a store")
    c.add_argument("--path", required=True)
    c.add_argument("--rows", type=int, required=True)
    c.add_argument("--cols", type=int, required=True)
    c.add_argument("--chunk-cols", type=int, required=True)
    c.add_argument("--fill-seed", type=int, default=None,
                   help="fill with reproducible Gaussian data from this seed")
    c.add_argument("--overwrite", action="store_true")
    c.set_defaults(func=cmd_store_create)

    c = store_sub.add_parser("merge", help="merge a store into one file")
    c.add_argument("--path", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--overwrite", action="store_true")
    c.set_defaults(func=cmd_store_merge)

    c = store_sub.add_parser("verify", help="check store integrity")
    c.add_argument("--path", required=True)
    c.set_defaults(func=cmd_store_verify)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"ERROR type=contract message={exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (ValueError, TypeError, KeyError) as exc:
        print(f"ERROR type=usage message={exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, IntegrityError) as exc:
        print(f"ERROR type=io message={exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
