"""Command-line surface: synth, cluster, report, calibrate, eval.

Every command writes a manifest.json into the output directory before any
other artifact, uses write-temp-then-rename for atomicity, and derives all
sub-seeds from the single --seed flag via a counter-based SHA-256 scheme
(see derive_seed), so identical inputs and seed give byte-identical output
trees. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .calibration import (
    ace,
    fit_temperature,
    mce,
    read_calibration_records,
    reliability,
    reliability_csv,
)
from .clustering import (
    ClusterConfig,
    cluster_pipeline,
    build_instance_clusters,
    labels_from_clusters,
)
from .evaluation import (
    cluster_to_detection,
    eval_csv,
    match_and_score,
    read_ground_truth,
    serialize_ground_truth,
)
from .figures import (
    box_figure,
    class_figure,
    heatmap_figure,
    kde_figure,
    reliability_figure,
)
from .ingest import (
    IngestConfig,
    ParseError,
    filter_background,
    read_sample_set,
    serialize_sample_set,
)
from .report import build_report, report_to_json, write_pgm
from .synth import generate, scene_spec_from_json

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def derive_seed(master: int, *tokens) -> int:
    """Deterministic sub-seed: SHA-256 over the master seed and a token path."""
    text = "dropuq:" + ":".join([str(master), *map(str, tokens)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def _safe_name(image_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", image_id) or "image"


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_manifest(out_dir: Path, command: str, inputs: Sequence[str], config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "tool": "dropuq",
        "version": __version__,
        "command": command,
        "inputs": list(inputs),
        "out_dir": str(out_dir),
        "config": config,
    }
    _write_text(out_dir / "manifest.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    spec = scene_spec_from_json(Path(args.spec).read_text(encoding="utf-8"))
    if args.seed is not None:
        spec = replace(spec, seed=derive_seed(args.seed, "synth", spec.image_id))
    _write_manifest(out_dir, "synth", [args.spec], {"seed": args.seed})
    sample_set, labels, gts = generate(spec)
    name = _safe_name(spec.image_id)
    _write_text(out_dir / f"{name}_samples.jsonl", serialize_sample_set(sample_set))
    _write_text(out_dir / f"{name}_gt.jsonl", serialize_ground_truth(gts))
    _write_text(
        out_dir / f"{name}_labels.json",
        json.dumps({"image_id": spec.image_id, "true_labels": labels}, sort_keys=True) + "\n",
    )
    print(
        f"{spec.image_id}: {len(sample_set.detections)} detections, "
        f"{len(gts)} instances, {spec.n_repetitions} repetitions"
    )
    return 0


def _cluster_one(path: str, args) -> str:
    out_dir = Path(args.out_dir)
    cfg = IngestConfig(background_threshold=args.background_threshold)
    raw = read_sample_set(path, cfg)
    filtered = filter_background(raw, cfg)
    if not filtered.detections:
        raise ValueError(f"{path}: nothing to cluster after background filtering")
    seed = derive_seed(args.seed, "cluster", filtered.image_id)
    ccfg = ClusterConfig(
        algorithm=args.algorithm,
        split_threshold=args.split_threshold,
        seed=seed,
    )
    clusters = cluster_pipeline(filtered, ccfg)
    labels = labels_from_clusters(filtered, clusters)
    doc = {
        "image_id": filtered.image_id,
        "algorithm": args.algorithm,
        "seed": seed,
        "split_threshold": args.split_threshold,
        "background_threshold": args.background_threshold,
        "mask_threshold": args.mask_threshold,
        "n_detections": len(filtered.detections),
        "labels": [int(v) for v in labels],
        "clusters": [
            {"cluster_id": c.cluster_id, "size": len(c), "split_refused": c.split_refused}
            for c in clusters
        ],
    }
    name = _safe_name(filtered.image_id)
    _write_text(out_dir / f"{name}_clusters.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")
    sizes = ", ".join(str(len(c)) for c in clusters)
    return f"{filtered.image_id}: {len(clusters)} clusters (sizes {sizes})"


def _cmd_cluster(args) -> int:
    out_dir = Path(args.out_dir)
    _write_manifest(
        out_dir,
        "cluster",
        list(args.samples),
        {
            "algorithm": args.algorithm,
            "seed": args.seed,
            "split_threshold": args.split_threshold,
            "background_threshold": args.background_threshold,
            "jobs": args.jobs,
        },
    )
    if args.jobs > 1 and len(args.samples) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(lambda p: _cluster_one(p, args), args.samples))
    else:
        summaries = [_cluster_one(p, args) for p in args.samples]
    for line in summaries:
        print(line)
    return 0


def _load_clustered(samples_path: str, clusters_path: str):
    """Rebuild the clustered sample set a cluster run wrote to disk."""
    doc = json.loads(Path(clusters_path).read_text(encoding="utf-8"))
    cfg = IngestConfig(background_threshold=doc["background_threshold"])
    raw = read_sample_set(samples_path, cfg)
    filtered = filter_background(raw, cfg)
    if raw.image_id != doc["image_id"]:
        raise ValueError(
            f"clusters file is for image {doc['image_id']!r}, "
            f"samples are {raw.image_id!r}"
        )
    if len(filtered.detections) != doc["n_detections"]:
        raise ValueError(
            f"clusters file expects {doc['n_detections']} filtered detections, "
            f"samples produce {len(filtered.detections)}"
        )
    clusters = build_instance_clusters(filtered, doc["labels"])
    flags = {c["cluster_id"]: c["split_refused"] for c in doc["clusters"]}
    clusters = [replace(c, split_refused=flags.get(c.cluster_id, False)) for c in clusters]
    return filtered, clusters, doc


def _cmd_report(args) -> int:
    out_dir = Path(args.out_dir)
    _write_manifest(
        out_dir,
        "report",
        [args.samples, args.clusters],
        {"mask_threshold": args.mask_threshold},
    )
    filtered, clusters, _ = _load_clustered(args.samples, args.clusters)
    name = _safe_name(filtered.image_id)
    for cluster in clusters:
        rep = build_report(cluster, mask_threshold=args.mask_threshold)
        stem = f"{name}_cluster_{cluster.cluster_id:03d}"
        _write_text(out_dir / f"{stem}_report.json", report_to_json(rep))
        _write_text(
            out_dir / f"{stem}_box.svg",
            box_figure(rep, filtered.width, filtered.height),
        )
        _write_text(out_dir / f"{stem}_classes.svg", class_figure(rep))
        _write_text(out_dir / f"{stem}_kde.svg", kde_figure(rep.box_kde, rep.mask_kde))
        if not rep.mask_stats.zero_mask:
            write_pgm(rep.mask_stats.mean_mask, out_dir / f"{stem}_mask_mean.pgm")
            write_pgm(rep.mask_stats.std_mask, out_dir / f"{stem}_mask_std.pgm")
            _write_text(
                out_dir / f"{stem}_mask_mean.svg", heatmap_figure(rep.mask_stats.mean_mask)
            )
            _write_text(
                out_dir / f"{stem}_mask_std.svg", heatmap_figure(rep.mask_stats.std_mask)
            )
        flag = " zero_mask" if rep.mask_stats.zero_mask else ""
        print(f"{filtered.image_id} cluster {cluster.cluster_id}: {len(cluster)} members{flag}")
    return 0


def _cmd_calibrate(args) -> int:
    out_dir = Path(args.out_dir)
    _write_manifest(out_dir, "calibrate", [args.records], {"bins": args.bins})
    records = read_calibration_records(args.records)
    if not records:
        raise ValueError(f"{args.records}: no calibration records")
    before = reliability(records, 1.0, args.bins)
    temperature = fit_temperature(records)
    after = reliability(records, temperature, args.bins)
    result = {
        "temperature": temperature,
        "mce_before": mce(before),
        "mce_after": mce(after),
        "ace_before": ace(before),
        "ace_after": ace(after),
        "already_calibrated": 0.95 <= temperature <= 1.05,
    }
    _write_text(out_dir / "temperature.json", json.dumps(result, sort_keys=True, indent=2) + "\n")
    _write_text(out_dir / "reliability_before.csv", reliability_csv(before))
    _write_text(out_dir / "reliability_after.csv", reliability_csv(after))
    _write_text(
        out_dir / "reliability_before.svg", reliability_figure(before, "before calibration")
    )
    _write_text(
        out_dir / "reliability_after.svg", reliability_figure(after, "after calibration")
    )
    print(f"temperature: {temperature:.4f}")
    print(f"mce: {result['mce_before']:.4f} -> {result['mce_after']:.4f}")
    print(f"ace: {result['ace_before']:.4f} -> {result['ace_after']:.4f}")
    if result["already_calibrated"]:
        print("note: records look already calibrated (T within [0.95, 1.05])")
    return 0


def _cmd_eval(args) -> int:
    out_dir = Path(args.out_dir)
    _write_manifest(
        out_dir,
        "eval",
        [args.samples, args.clusters, args.gt],
        {"mode": args.mode, "mask_threshold": args.mask_threshold},
    )
    filtered, clusters, _ = _load_clustered(args.samples, args.clusters)
    gts = read_ground_truth(args.gt, filtered.height, filtered.width)
    preds = [
        cluster_to_detection(build_report(c, mask_threshold=args.mask_threshold), filtered.image_id)
        for c in clusters
    ]
    modes = ["box", "mask"] if args.mode == "both" else [args.mode]
    results = [match_and_score(preds, gts, mode=m) for m in modes]
    _write_text(out_dir / "eval.csv", eval_csv(results))
    for res in results:
        value = "n/a" if res.map50 is None else f"{res.map50:.4f}"
        print(f"mAP@0.5 ({res.mode}): {value}")
    return 0


def _add_shared(parser: argparse.ArgumentParser, *names: str) -> None:
    if "seed" in names:
        parser.add_argument("--seed", type=int, default=0, help="master random seed")
    if "jobs" in names:
        parser.add_argument("--jobs", type=int, default=1, help="parallel images")
    if "out-dir" in names:
        parser.add_argument("--out-dir", required=True, help="output directory")
    if "algorithm" in names:
        parser.add_argument(
            "--algorithm", choices=("bgm", "agg"), default="bgm", help="clustering algorithm"
        )
    if "split-threshold" in names:
        parser.add_argument("--split-threshold", type=int, default=150)
    if "background-threshold" in names:
        parser.add_argument("--background-threshold", type=float, default=0.45)
    if "mask-threshold" in names:
        parser.add_argument("--mask-threshold", type=float, default=0.5)
    if "bins" in names:
        parser.add_argument("--bins", type=int, default=10)


def main(argv: Optional[List[str]] = None) -> int:
    parser = _Parser(prog="dropuq", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dropuq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene from a spec file")
    p.add_argument("spec", help="scene spec JSON")
    _add_shared(p, "out-dir")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("cluster", help="cluster sampled detections into instances")
    p.add_argument("samples", nargs="+", help="prediction-sample files")
    _add_shared(
        p, "seed", "jobs", "out-dir", "algorithm", "split-threshold",
        "background-threshold", "mask-threshold",
    )
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("report", help="per-cluster uncertainty reports and figures")
    p.add_argument("samples", help="prediction-sample file")
    p.add_argument("--clusters", required=True, help="clusters file from 'cluster'")
    _add_shared(p, "out-dir", "mask-threshold")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("calibrate", help="fit temperature and reliability metrics")
    p.add_argument("records", help="calibration records file")
    _add_shared(p, "out-dir", "bins")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("eval", help="mAP@0.5 against ground truth")
    p.add_argument("samples", help="prediction-sample file")
    p.add_argument("--clusters", required=True)
    p.add_argument("--gt", required=True, help="ground-truth file")
    p.add_argument("--mode", choices=("box", "mask", "both"), default="both")
    _add_shared(p, "out-dir", "mask-threshold")
    p.set_defaults(func=_cmd_eval)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"dropuq: error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
