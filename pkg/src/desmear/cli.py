"""Command-line pipeline driver.

Exit codes: 0 success, 2 usage or configuration error, 3 data or geometry
failure.  Report-producing commands write a JSON record, a CSV table, and
rendered figures side by side.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import dataset, report
from .alignment import IcpConfig, align_sequence, refine_with_labels, relative_pose_errors
from .annotator import AnnotationResult, annotate_sequence
from .baselines import median_filter_scores, statistical_outlier_raster
from .core import AnnotatorConfig, DatasetError, DegenerateGeometryError
from .export import export_dataset
from .fusion import FILTERS, fuse_sequence, write_ply
from .metrics import confusion_at_threshold, labels_to_scores, mean_average_precision
from .simulator import default_scene_config, write_scene_dataset


def _data_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (DatasetError, DegenerateGeometryError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _annotator_config(epsilon, delta, window, m, alpha=0.3, beta=0.7) -> AnnotatorConfig:
    try:
        return AnnotatorConfig(
            epsilon_mm=epsilon, delta_mm=delta, window=window, m=m, alpha=alpha, beta=beta
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))


@click.group()
def main():
    """Self-annotation pipeline for smeared depth pixels."""


@main.command()
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--scene-config", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Scene JSON; omit for the default box-over-backdrop scene.")
@click.option("--seed", type=int, default=None, help="Override the scene seed.")
@_data_errors
def simulate(out_dir: Path, scene_config: Path | None, seed: int | None):
    """Render a synthetic dataset with ground-truth smear masks."""
    if scene_config is None:
        config = default_scene_config()
    else:
        try:
            with open(scene_config) as fh:
                config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"bad scene config: {exc}")
    if seed is not None:
        config["seed"] = seed
    try:
        root = write_scene_dataset(config, out_dir)
    except (KeyError, ValueError) as exc:
        raise click.UsageError(f"bad scene config: {exc}")
    n = len(dataset.list_frame_ids(root / "depth"))
    click.echo(f"wrote {n} frames to {root}")


@main.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--force", is_flag=True, help="Recompute even if poses exist.")
@click.option("--max-iterations", type=int, default=30, show_default=True)
@click.option("--radius", type=float, default=100.0, show_default=True,
              help="Correspondence radius, mm.")
@click.option("--neighbor-span", type=int, default=2, show_default=True)
@click.option("--voxel", type=float, default=10.0, show_default=True,
              help="Downsampling voxel size, mm (0 disables).")
@click.option("--metric", type=click.Choice(["plane", "point"]), default="plane",
              show_default=True)
@_data_errors
def align(dataset_dir: Path, force: bool, max_iterations: int, radius: float,
          neighbor_span: int, voxel: float, metric: str):
    """Estimate camera poses with multi-frame ICP and write poses/."""
    seq = dataset.load_sequence(dataset_dir)
    if len(seq) < 2:
        raise click.UsageError("alignment needs at least two frames")
    try:
        cfg = IcpConfig(
            max_iterations=max_iterations,
            correspondence_radius_mm=radius,
            neighbor_span=neighbor_span,
            voxel_size_mm=voxel,
            metric=metric,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))

    had_poses = seq.is_posed
    if had_poses and not force:
        click.echo("poses already present; use --force to recompute")
        return
    diagnostics: list[dict] = []
    aligned = align_sequence(seq, cfg, diagnostics=diagnostics)
    for frame in aligned.frames:
        dataset.write_pose(dataset_dir, frame.frame_id, frame.pose)
    for row in diagnostics:
        click.echo(
            f"frame {row['frame']:3d}: rms {row['rms_residual']:8.3f} mm  "
            f"inliers {row['inlier_fraction']:.2f}"
        )
    if had_poses:
        errs = relative_pose_errors(aligned, seq)
        worst_rot = max(e[0] for e in errs)
        worst_tr = max(e[1] for e in errs)
        click.echo(
            f"pose error vs previous poses: max {worst_rot:.4f} deg / {worst_tr:.3f} mm"
        )


@main.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--epsilon", type=float, default=4.0, show_default=True, help="Valid tolerance, mm.")
@click.option("--delta", type=float, default=15.0, show_default=True, help="Behind margin, mm.")
@click.option("--window", type=int, default=3, show_default=True,
              help="Empty-evidence filter window (odd).")
@click.option("--m", "m_frames", type=int, default=4, show_default=True,
              help="Reference frames per target (even).")
@click.option("--refine", is_flag=True,
              help="Re-estimate poses from valid points, then annotate again.")
@click.option("--jobs", type=int, default=1, show_default=True)
@_data_errors
def annotate(dataset_dir: Path, epsilon: float, delta: float, window: int,
             m_frames: int, refine: bool, jobs: int):
    """Generate per-pixel smeared/valid/unknown labels."""
    cfg = _annotator_config(epsilon, delta, window, m_frames)
    seq = dataset.load_sequence(dataset_dir)
    result = annotate_sequence(seq, cfg, jobs=jobs)
    if refine:
        refined = refine_with_labels(seq, result.labels)
        for frame in refined.frames:
            dataset.write_pose(dataset_dir, frame.frame_id, frame.pose)
        result = annotate_sequence(refined, cfg, jobs=jobs)
        result.stats["refined"] = True
    _write_annotation(dataset_dir, seq, result)
    frac = result.stats["unknown_fraction"]
    click.echo(f"labeled {len(seq)} frames; unknown fraction {frac:.3f}")


def _write_annotation(root: Path, seq, result: AnnotationResult) -> None:
    for frame, lab, ev in zip(seq.frames, result.labels, result.evidence):
        dataset.save_labels(lab, root, frame.frame_id)
        dataset.save_evidence_flags(root, frame.frame_id, ev.v, ev.b, ev.e)
    stats_path = Path(root) / "labels" / "stats.json"
    stats_path.parent.mkdir(parents=True, exist_ok=True)
    with open(stats_path, "w") as fh:
        json.dump(result.stats, fh, indent=2, sort_keys=True)


def _resolve_gt_dir(gt_path: Path) -> Path:
    if (gt_path / "gt").is_dir():
        return gt_path / "gt"
    if gt_path.is_dir() and dataset.list_frame_ids(gt_path):
        return gt_path
    raise click.UsageError(f"no ground-truth rasters found under {gt_path}")


def _prediction_scores(pred_dir: Path, baseline: str | None, ids: list[int]) -> dict[int, np.ndarray]:
    if baseline is not None:
        seq = dataset.load_sequence(pred_dir)
        frames = {f.frame_id: f for f in seq.frames}
        if baseline == "median":
            return {i: median_filter_scores(frames[i].depth) for i in ids if i in frames}
        return {i: statistical_outlier_raster(frames[i]) for i in ids if i in frames}
    if (pred_dir / "scores").is_dir():
        have = set(dataset.list_frame_ids(pred_dir / "scores"))
        return {i: dataset.load_scores(pred_dir, i) for i in ids if i in have}
    if (pred_dir / "labels").is_dir():
        have = set(dataset.list_frame_ids(pred_dir / "labels"))
        return {i: labels_to_scores(dataset.load_labels(pred_dir, i)) for i in ids if i in have}
    raise click.UsageError(
        f"{pred_dir} holds neither scores/ nor labels/; pass --baseline to score raw depth"
    )


@main.command()
@click.argument("pred_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("gt_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--baseline", type=click.Choice(["median", "statistical"]), default=None,
              help="Score PRED_DIR's depth with a classical detector instead.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="Report directory [default: PRED_DIR/report].")
@click.option("--threshold", type=float, default=0.5, show_default=True)
@_data_errors
def evaluate(pred_dir: Path, gt_dir: Path, baseline: str | None, out_dir: Path | None,
             threshold: float):
    """Score predictions against ground truth and write a report."""
    gt_root = _resolve_gt_dir(gt_dir)
    ids = dataset.list_frame_ids(gt_root)
    scores = _prediction_scores(pred_dir, baseline, ids)
    ids = [i for i in ids if i in scores]
    if not ids:
        raise click.UsageError("no frames shared between predictions and ground truth")

    gts = {i: dataset.read_png(gt_root / f"{dataset.frame_name(i)}.png") for i in ids}
    result = mean_average_precision([scores[i] for i in ids], [gts[i] for i in ids])
    confusion = [
        dict(frame=i, **confusion_at_threshold(scores[i], gts[i], threshold)) for i in ids
    ]
    per_frame = [
        {"frame": ids[row["frame"]], "ap": row["ap"]} for row in result["per_frame"]
    ]
    payload = {
        "map": result["map"],
        "per_frame_ap": per_frame,
        "skipped_frames": [ids[i] for i in result["skipped_frames"]],
        "confusion_at_threshold": confusion,
        "baseline": baseline,
    }

    out = out_dir if out_dir is not None else pred_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    rows = [
        {**ap_row, **{k: v for k, v in conf.items() if k != "frame"}}
        for ap_row, conf in zip(per_frame, confusion)
    ]
    report.write_csv(out / "report.csv", rows,
                     ["frame", "ap", "threshold", "tp", "fp", "fn", "tn"])
    curves = [
        (f"frame {i}", *report.pr_points(scores[i], gts[i])) for i in ids
    ]
    report.pr_curve_figure(out / "pr_curves.png", curves,
                           f"PR (mAP = {result['map']:.3f})")
    report.ap_bar_figure(
        out / "ap_per_frame.png",
        [r["frame"] for r in per_frame],
        [r["ap"] for r in per_frame],
        result["map"],
        "average precision per frame",
    )
    click.echo(f"mAP {result['map']:.4f} over {len(per_frame)} frames -> {out}")


@main.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--alpha", type=float, default=0.3, show_default=True)
@click.option("--beta", type=float, default=0.7, show_default=True)
@click.option("--size", type=int, default=512, show_default=True)
@_data_errors
def export(dataset_dir: Path, out_dir: Path, alpha: float, beta: float, size: int):
    """Export a training set (depth + omega + labels) with a manifest."""
    manifest = export_dataset(dataset_dir, out_dir, alpha=alpha, beta=beta, size=size)
    click.echo(
        f"exported {len(manifest['frames'])} frames at {size}x{size} to {out_dir}"
    )


@main.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("out_ply", type=click.Path(path_type=Path))
@click.option("--filter", "filter_kind", type=click.Choice(list(FILTERS)), default="none",
              show_default=True)
@click.option("--ply-format", type=click.Choice(["binary", "ascii"]), default="binary",
              show_default=True)
@_data_errors
def fuse(dataset_dir: Path, out_ply: Path, filter_kind: str, ply_format: str):
    """Merge all frames into one world-frame PLY cloud."""
    seq = dataset.load_sequence(dataset_dir)
    labels = None
    if filter_kind == "labels":
        if not (dataset_dir / "labels").is_dir():
            raise DatasetError(f"no labels/ under {dataset_dir}; run annotate first")
        labels = [dataset.load_labels(dataset_dir, f.frame_id) for f in seq.frames]
    cloud = fuse_sequence(seq, filter_kind, labels=labels)
    write_ply(out_ply, cloud, binary=ply_format == "binary")
    click.echo(f"fused {len(seq)} frames -> {len(cloud)} points ({out_ply})")


@main.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--param", type=click.Choice(["m", "window"]), required=True)
@click.option("--values", required=True, help="Comma-separated parameter values.")
@click.option("--epsilon", type=float, default=4.0, show_default=True)
@click.option("--delta", type=float, default=15.0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@_data_errors
def sweep(dataset_dir: Path, param: str, values: str, epsilon: float, delta: float,
          out_dir: Path | None, jobs: int):
    """Ablation sweep over the reference-frame count or the empty window."""
    try:
        vals = [int(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise click.UsageError(f"bad --values: {exc}")
    if not vals:
        raise click.UsageError("--values is empty")

    seq = dataset.load_sequence(dataset_dir)
    gt = None
    if (dataset_dir / "gt").is_dir():
        gt = {i: dataset.load_gt(dataset_dir, i) for i in dataset.list_frame_ids(dataset_dir / "gt")}

    rows = []
    for val in vals:
        kwargs = {"m": val} if param == "m" else {"window": val}
        cfg = _annotator_config(epsilon, delta,
                                kwargs.get("window", 3), kwargs.get("m", 4))
        result = annotate_sequence(seq, cfg, jobs=jobs)
        row = {
            param: val,
            "unknown_fraction": result.stats["unknown_fraction"],
            "valid": result.stats["totals"]["valid"],
            "smeared": result.stats["totals"]["smeared"],
            "e_flags": result.stats["evidence_counts"]["e"],
        }
        if gt:
            from .simulator import evaluate_against_truth

            prec, rec = [], []
            for frame, lab in zip(seq.frames, result.labels):
                if frame.frame_id not in gt:
                    continue
                scores = evaluate_against_truth(lab, gt[frame.frame_id])
                if scores["smeared_precision"] is not None:
                    prec.append(scores["smeared_precision"])
                if scores["smeared_recall"] is not None:
                    rec.append(scores["smeared_recall"])
            row["smeared_precision"] = float(np.mean(prec)) if prec else None
            row["smeared_recall"] = float(np.mean(rec)) if rec else None
        rows.append(row)
        click.echo(f"{param}={val}: " + ", ".join(f"{k}={v}" for k, v in row.items() if k != param))

    out = out_dir if out_dir is not None else dataset_dir / f"sweep-{param}"
    out.mkdir(parents=True, exist_ok=True)
    fields = [param, "unknown_fraction", "valid", "smeared", "e_flags",
              "smeared_precision", "smeared_recall"]
    report.write_csv(out / "sweep.csv", rows, fields)
    with open(out / "sweep.json", "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
    metrics = ["unknown_fraction", "smeared_precision", "smeared_recall"]
    report.sweep_figure(out / "sweep.png", param, rows, metrics)
    click.echo(f"sweep written to {out}")


if __name__ == "__main__":
    main()
