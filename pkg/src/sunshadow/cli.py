"""Command-line entry point.

Subcommands wire the library into the complete workflows: estimate (EM on
a real or synthetic sequence), baseline (the prior thresholding methods),
synth (render a ground-truthed dataset), score / sweep / report (the
evaluation protocol). Report paths write matplotlib figures next to their
text/CSV outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io as sio
from . import plots
from .baselines import (
    FtlvParams,
    HsParams,
    default_ftlv_grid,
    default_hs_grid,
    ftlv_shadows,
    hs_shadows,
    parameter_sweep,
    summarize_strategies,
)
from .core import to_grayscale
from .em import EmConfig, finalize_color, repair_saturation, run_em
from .errors import DataError, NumericsError, SunShadowError
from .metrics import ScoreRow, score, sort_rows, table_report
from .solar import lighting_table
from .synth import (
    ResponseFunction,
    apply_response,
    cubic_response,
    gamma_response,
    make_scene,
    render_sequence,
    scene_descriptor,
)

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _parse_response(spec: str) -> ResponseFunction:
    """Parse 'gamma:2.2', 'cubic:0.8,0.3', or 'identity'."""
    name, _, rest = spec.partition(":")
    try:
        if name == "identity":
            return ResponseFunction("identity")
        if name == "gamma":
            return gamma_response(float(rest))
        if name == "cubic":
            strength, pivot = (float(v) for v in rest.split(","))
            return cubic_response(strength, pivot)
    except ValueError:
        raise DataError(f"cannot parse response spec {spec!r}") from None
    raise DataError(f"unknown response family in {spec!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise DataError(f"cannot parse float list {text!r}") from None


# ---------------------------------------------------------------------------
# estimate


def _cmd_estimate(args) -> int:
    started = time.time()
    seq = sio.load_sequence(args.manifest)
    if not seq.is_grayscale:
        seq = repair_saturation(seq)
    gray = to_grayscale(seq)
    lights = lighting_table(gray)
    config = EmConfig(max_iterations=args.max_iters, worker_count=args.workers)
    result = run_em(gray, lights, config)
    model = result.model if gray is seq else finalize_color(seq, lights, result)

    out = Path(args.out)
    sio.save_shadow_volume(result.shadows, out / "masks")
    sio.save_model(model, out / "model")
    elapsed = time.time() - started

    iters = result.iterations_to_converge
    converged = result.shadows.converged
    histogram = np.bincount(iters[converged], minlength=config.max_iterations + 1)
    n_unconverged = int((~converged).sum())
    lines = [
        f"frames: {seq.n_frames}",
        f"pixels: {seq.n_pixels}",
        f"workers: {config.resolved_workers()}",
        f"max_iterations: {config.max_iterations}",
        f"converged: {int(converged.sum())}",
        f"unconverged: {n_unconverged}",
        f"rank_deficient: {int(result.rank_deficient.sum())}",
        f"force_lit: {int(seq.force_lit.sum()) if seq.force_lit is not None else 0}",
        f"elapsed_seconds: {elapsed:.2f}",
        "iterations_histogram:",
    ]
    for iteration in range(config.max_iterations + 1):
        if histogram[iteration]:
            lines.append(f"  {iteration}: {int(histogram[iteration])}")
    if n_unconverged:
        lines.append(f"  unconverged: {n_unconverged}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="ascii")
    plots.save_convergence_histogram(iters, converged, config.max_iterations, out / "convergence.png")
    print(f"wrote {out}/masks, {out}/model, summary.txt, convergence.png")
    print(f"converged {int(converged.sum())}/{seq.n_pixels} pixels in {elapsed:.1f}s")
    return 0


# ---------------------------------------------------------------------------
# baseline


def _cmd_baseline(args) -> int:
    seq = sio.load_sequence(args.manifest)
    gray = to_grayscale(seq)
    if args.algo == "ftlv":
        params = FtlvParams(
            theta_p=args.theta_p if args.theta_p is not None else 0.2,
            theta_k=args.theta_k if args.theta_k is not None else 1.5,
        )
        volume = ftlv_shadows(gray, params)
        described = f"ftlv theta_p={params.theta_p} theta_k={params.theta_k}"
    else:
        params = HsParams(
            theta_p=args.theta_p if args.theta_p is not None else 0.8,
            theta_lambda=args.theta_lambda if args.theta_lambda is not None else 0.05,
        )
        volume = hs_shadows(gray, params)
        described = f"hs theta_p={params.theta_p} theta_lambda={params.theta_lambda}"
    out = Path(args.out)
    sio.save_shadow_volume(volume, out)
    sio.write_key_value(out / "params.txt", {"algorithm": args.algo, "params": described})
    print(f"wrote {volume.n_frames} masks to {out} ({described})")
    return 0


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    scene = make_scene(args.scene, size=args.size, seed=args.scene_seed)
    render = render_sequence(
        scene,
        args.frames,
        seed=args.seed,
        span_days=args.span,
        exposure=args.exposure,
    )
    out = Path(args.out)
    manifest = sio.save_sequence(render.sequence, out)
    sio.save_shadow_volume(render.truth, out / "truth")
    descriptor = scene_descriptor(scene.name, args.size, args.scene_seed)
    descriptor.update(
        {
            "frames": str(args.frames),
            "span_days": repr(float(args.span)),
            "render_seed": str(args.seed),
            "exposure": repr(float(args.exposure)),
            "latitude": repr(scene.latitude),
            "longitude": repr(scene.longitude),
        }
    )
    sio.save_scene_descriptor(out / "scene.txt", descriptor)
    print(f"wrote {args.frames} frames + truth to {out} (manifest {manifest.name})")
    if args.response:
        response = _parse_response(args.response)
        distorted = apply_response(render.sequence, response)
        safe = response.label.replace(":", "_").replace(",", "_")
        sub = out / f"response_{safe}"
        sio.save_sequence(distorted, sub)
        sio.save_shadow_volume(render.truth, sub / "truth")
        print(f"wrote distorted copy under {sub}")
    return 0


# ---------------------------------------------------------------------------
# score


def _cmd_score(args) -> int:
    predicted = sio.load_shadow_volume(args.pred)
    labels = sio.load_label_masks(args.labels)
    report = score(
        predicted,
        labels,
        algorithm=args.algorithm,
        strategy=args.strategy,
        scene=args.scene,
    )
    print(f"accuracy {100.0 * report.accuracy:.2f}")
    print(
        f"labeled {report.labeled} (lit {report.n_lit}, shadow {report.n_shadow}, "
        f"unknown {report.n_unknown}); per-frame macro {100.0 * report.macro_accuracy:.2f}"
    )
    if args.out:
        sio.write_score_csv([report.row()], args.out)
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# sweep


def _parse_dataset(spec: str) -> tuple[str, Path, Path]:
    name, eq, rest = spec.partition("=")
    manifest, colon, labels = rest.partition(":")
    if not eq or not colon or not name or not manifest or not labels:
        raise DataError(f"dataset spec must be NAME=MANIFEST:LABELDIR, got {spec!r}")
    return name, Path(manifest), Path(labels)


def _sweep_grids(args):
    theta_p = _float_list(args.theta_p) if args.theta_p else None
    grids = {}
    if args.algo in ("ftlv", "both"):
        if theta_p or args.theta_k:
            ps = theta_p or [0.02, 0.05, 0.1, 0.2, 0.3]
            ks = _float_list(args.theta_k) if args.theta_k else [1.1, 1.3, 1.5, 1.8, 2.1, 2.5]
            grid = [FtlvParams(p, k) for p in ps for k in ks]
        else:
            grid = default_ftlv_grid()
        suggested = FtlvParams()
        if suggested not in grid:
            grid.append(suggested)
        grids["ftlv"] = (grid, suggested)
    if args.algo in ("hs", "both"):
        if theta_p or args.theta_lambda:
            ps = theta_p or [0.02, 0.05, 0.1, 0.2, 0.3]
            lams = (
                _float_list(args.theta_lambda)
                if args.theta_lambda
                else [0.005, 0.01, 0.02, 0.05, 0.1, 0.2]
            )
            grid = [HsParams(p, lam) for p in ps for lam in lams]
        else:
            grid = default_hs_grid()
        suggested = HsParams()
        if suggested not in grid:
            grid.append(suggested)
        grids["hs"] = (grid, suggested)
    return grids


def _cmd_sweep(args) -> int:
    datasets = [_parse_dataset(spec) for spec in args.dataset]
    loaded = []
    for name, manifest, label_dir in datasets:
        seq = to_grayscale(sio.load_sequence(manifest))
        labels = sio.load_label_masks(label_dir)
        loaded.append((name, seq, labels))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    strategy_rows: list[ScoreRow] = []
    for algorithm, (grid, suggested) in _sweep_grids(args).items():
        per_scene = {}
        for name, seq, labels in loaded:
            per_scene[name] = parameter_sweep(seq, labels, grid)
            log.info("swept %s on %s: best %.2f%%", algorithm, name,
                     100.0 * max(r.accuracy for r in per_scene[name]))

        grid_csv = out / f"sweep_{algorithm}.csv"
        with open(grid_csv, "w", encoding="ascii") as handle:
            handle.write("algorithm,scene,theta_p,theta_2,accuracy_percent,labeled\n")
            for name, rows in sorted(per_scene.items()):
                for row in rows:
                    second = (
                        row.params.theta_k
                        if isinstance(row.params, FtlvParams)
                        else row.params.theta_lambda
                    )
                    handle.write(
                        f"{algorithm},{name},{row.params.theta_p!r},{second!r},"
                        f"{100.0 * row.accuracy!r},{row.labeled}\n"
                    )
        plots.save_sweep_curves(per_scene, out / f"sweep_{algorithm}.png", algorithm)

        table = summarize_strategies(per_scene, suggested)
        for strategy, cells in table.items():
            for scene, accuracy in cells:
                strategy_rows.append(ScoreRow(algorithm, strategy, scene, 100.0 * accuracy))

        weights = {name: rows[0].labeled for name, rows in per_scene.items()}
        for strategy, cells in table.items():
            macro = float(np.mean([acc for _, acc in cells]))
            pooled = float(
                np.sum([acc * weights[scene] for scene, acc in cells])
                / np.sum([weights[scene] for scene, _ in cells])
            )
            print(
                f"{algorithm:5s} {strategy:9s} mean {100 * macro:6.2f}%  "
                f"pooled {100 * pooled:6.2f}%"
            )

    sio.write_score_csv(sort_rows(strategy_rows), out / "strategies.csv")
    print(f"wrote {out}/sweep_*.csv, strategies.csv, sweep_*.png")
    return 0


# ---------------------------------------------------------------------------
# report


def _cmd_report(args) -> int:
    rows: list[ScoreRow] = []
    for path in args.csv:
        rows.extend(sio.read_score_csv(path))
    text, ordered = table_report(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.txt").write_text(text, encoding="ascii")
    sio.write_score_csv(ordered, out / "table.csv")
    plots.save_strategy_bars(ordered, out / "table.png")
    print(text, end="")
    print(f"wrote {out}/table.txt, table.csv, table.png")
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sunshadow", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="run the EM estimator on a sequence")
    est.add_argument("--manifest", required=True)
    est.add_argument("--out", required=True)
    est.add_argument("--max-iters", type=int, default=50)
    est.add_argument("--workers", default="auto")
    est.set_defaults(func=_cmd_estimate)

    base = sub.add_parser("baseline", help="run a prior thresholding baseline")
    base.add_argument("--algo", choices=("ftlv", "hs"), required=True)
    base.add_argument("--manifest", required=True)
    base.add_argument("--out", required=True)
    base.add_argument("--theta-p", type=float, default=None)
    base.add_argument("--theta-k", type=float, default=None)
    base.add_argument("--theta-lambda", type=float, default=None)
    base.set_defaults(func=_cmd_baseline)

    synth = sub.add_parser("synth", help="render a synthetic ground-truthed dataset")
    synth.add_argument("--scene", required=True)
    synth.add_argument("--frames", type=int, required=True)
    synth.add_argument("--span", type=float, required=True, help="days")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.add_argument("--size", type=int, default=64)
    synth.add_argument("--scene-seed", type=int, default=None,
                       help="override the scene generator's fixed seed")
    synth.add_argument("--exposure", type=float, default=1.0)
    synth.add_argument("--response", default=None, help="e.g. gamma:2.2 or cubic:0.8,0.3")
    synth.set_defaults(func=_cmd_synth)

    sc = sub.add_parser("score", help="score predicted masks against labels")
    sc.add_argument("--pred", required=True, help="shadow volume directory")
    sc.add_argument("--labels", required=True, help="label mask directory")
    sc.add_argument("--algorithm", default="em")
    sc.add_argument("--strategy", default="all")
    sc.add_argument("--scene", default="")
    sc.add_argument("--out", default=None, help="optional score CSV")
    sc.set_defaults(func=_cmd_score)

    sw = sub.add_parser("sweep", help="cross-validate baseline parameters")
    sw.add_argument("--algo", choices=("ftlv", "hs", "both"), default="both")
    sw.add_argument(
        "--dataset",
        action="append",
        required=True,
        help="NAME=MANIFEST:LABELDIR (repeatable)",
    )
    sw.add_argument("--out", required=True)
    sw.add_argument("--theta-p", default=None, help="comma list")
    sw.add_argument("--theta-k", default=None, help="comma list")
    sw.add_argument("--theta-lambda", default=None, help="comma list")
    sw.set_defaults(func=_cmd_sweep)

    rep = sub.add_parser("report", help="merge score CSVs into the accuracy table")
    rep.add_argument("csv", nargs="+")
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (None, 0) else int(exc.code)
    try:
        return int(args.func(args) or 0)
    except NumericsError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 3
    except (DataError, SunShadowError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
