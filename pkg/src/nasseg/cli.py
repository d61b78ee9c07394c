"""Command-line surface.

Subcommands: segment, superpixelify, lerf, aucmax, wsol, semantic, overlay,
bench. Every run writes its outputs plus a run manifest (full configuration,
seeds, stage timings) into --out. Exit codes: 0 success, 1 validation error,
2 oracle failure. NAS_LOG={debug,info,warning} controls verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, tensorio
from .clustering import kmeans_fit, ward_fit, cut_dendrogram
from .errors import NassegError, OracleFailure
from .features import NasConfig, build_feature_matrix, segment
from .lerf import greedy_auc_max, lerf_curve, write_curve_csv
from .oracle import FileOracle, open_oracle, standardize
from .saliency import minmax_normalize, superpixelify
from .semantic import cluster_saliency_table, fit_class_cluster_model, write_table_csv
from .superpixels import boundary_frequency, boundary_mask, connected_components
from .wsol import WsolConfig, max_box_acc_v2, read_gt_csv, write_results_csv

log = logging.getLogger("nasseg")


class UsageError(NassegError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(message)


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str = __version__
    timings_s: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "run_manifest.json"
        _atomic_write_bytes(
            json.dumps(
                {
                    "command": self.command,
                    "version": self.version,
                    "config": self.config,
                    "timings_s": self.timings_s,
                    "outputs": self.outputs,
                },
                indent=2,
                sort_keys=True,
            ).encode(),
            path,
        )
        return path


def _atomic_write_bytes(data: bytes, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic(writer, obj, path: Path) -> str:
    """Run a path-taking writer against a temp file, then rename into place."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    os.close(fd)
    try:
        writer(obj, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return str(path)


class _Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    def time(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = timer.stages.get(name, 0.0) + (
                    time.perf_counter() - self.t0
                )

        return _Ctx()


def _parse_depths(text: str) -> list[int]:
    try:
        depths = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad --depths {text!r}: {exc}") from exc
    if not depths:
        raise UsageError("--depths must name at least one depth")
    return depths


def _load_query_image(oracle, ref: str) -> tuple[str, np.ndarray]:
    """Resolve --image as a PNG path, else as an id in a file-backend store."""
    path = Path(ref)
    if path.is_file():
        return path.stem, tensorio.read_image_png(path)
    if isinstance(oracle, FileOracle):
        return ref, oracle.load_image(ref)
    raise UsageError(f"--image {ref!r} is not a readable PNG path")


def _nas_config(args, meta) -> NasConfig:
    h, w, _ = meta.input_size
    return NasConfig(
        output_h=h,
        output_w=w,
        depths=_parse_depths(args.depths),
        k=args.k,
        scale_rows=not args.no_scale,
        weight_channels=not args.no_weight,
        seed=args.seed,
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_partition(path: str, connectivity: int):
    clusters = tensorio.read_label_map(path)
    return connected_components(clusters, connectivity=connectivity)


# --- subcommands ---


def _cmd_segment(args) -> int:
    out = _out_dir(args)
    timer = _Timer()
    oracle = open_oracle(args.oracle)
    stem, img = _load_query_image(oracle, args.image)
    cfg = _nas_config(args, oracle.meta)
    with timer.time("activations"):
        std = standardize(img, oracle.meta)
        acts = oracle.activations(std, cfg.depths)
    with timer.time("segment"):
        clusters = segment(acts, cfg, clusterer=args.clusterer)
    with timer.time("components"):
        partition = connected_components(clusters, connectivity=args.connectivity)
    outputs = [
        _atomic(tensorio.write_label_map, clusters, out / f"labels_{stem}.npy"),
        _atomic(
            tensorio.write_label_map,
            partition.label_map,
            out / f"superpixels_{stem}.npy",
        ),
        _atomic(tensorio.write_segmentation_png, clusters, out / f"segment_{stem}.png"),
    ]
    manifest = RunManifest(
        command="segment",
        config={
            "oracle": args.oracle,
            "image": args.image,
            "depths": cfg.depths,
            "k": cfg.k,
            "seed": cfg.seed,
            "scale_rows": cfg.scale_rows,
            "weight_channels": cfg.weight_channels,
            "clusterer": args.clusterer,
            "connectivity": args.connectivity,
            "components": int(partition.component_count),
        },
        timings_s=timer.stages,
        outputs=outputs,
    )
    manifest.write(out)
    log.info("segment: %d clusters, %d superpixels", cfg.k, partition.component_count)
    print(out / f"labels_{stem}.npy")
    return 0


def _cmd_superpixelify(args) -> int:
    out = _out_dir(args)
    timer = _Timer()
    partition = _load_partition(args.partition, args.connectivity)
    saliency = tensorio.read_npy(args.saliency)
    with timer.time("superpixelify"):
        sp = superpixelify(saliency, partition)
    stem = Path(args.saliency).stem
    outputs = [_atomic(tensorio.write_npy, sp, out / f"superpixelified_{stem}.npy")]
    RunManifest(
        command="superpixelify",
        config={
            "partition": args.partition,
            "saliency": args.saliency,
            "connectivity": args.connectivity,
            "components": int(partition.component_count),
        },
        timings_s=timer.stages,
        outputs=outputs,
    ).write(out)
    print(outputs[0])
    return 0


def _resolve_target(args, oracle, std) -> int:
    if args.target is not None:
        return int(args.target)
    logits = oracle.logits(std[None])[0]
    return int(np.argmax(logits))


def _cmd_lerf(args) -> int:
    out = _out_dir(args)
    timer = _Timer()
    oracle = open_oracle(args.oracle)
    stem, img = _load_query_image(oracle, args.image)
    partition = _load_partition(args.partition, args.connectivity)
    saliency = tensorio.read_npy(args.saliency)
    std = standardize(img, oracle.meta)
    target = _resolve_target(args, oracle, std)
    with timer.time("lerf"):
        curve = lerf_curve(std, partition, saliency, oracle, target, batch=args.batch)
    csv_path = out / f"lerf_{stem}.csv"
    outputs = [_atomic(write_curve_csv, curve, csv_path)]
    RunManifest(
        command="lerf",
        config={
            "oracle": args.oracle,
            "image": args.image,
            "partition": args.partition,
            "saliency": args.saliency,
            "target": target,
            "connectivity": args.connectivity,
            "components": int(partition.component_count),
            "auc": curve.auc,
            "leaves_unit_interval": curve.leaves_unit_interval,
            "oracle_queries": curve.oracle_queries,
        },
        timings_s=timer.stages,
        outputs=outputs,
    ).write(out)
    print(f"{csv_path} auc={curve.auc:.6f}")
    return 0


def _cmd_aucmax(args) -> int:
    out = _out_dir(args)
    timer = _Timer()
    oracle = open_oracle(args.oracle)
    stem, img = _load_query_image(oracle, args.image)
    partition = _load_partition(args.partition, args.connectivity)
    std = standardize(img, oracle.meta)
    target = _resolve_target(args, oracle, std)
    with timer.time("aucmax"):
        order, curve = greedy_auc_max(std, partition, oracle, target, batch=args.batch)
    csv_path = out / f"aucmax_{stem}.csv"
    outputs = [_atomic(write_curve_csv, curve, csv_path)]
    RunManifest(
        command="aucmax",
        config={
            "oracle": args.oracle,
            "image": args.image,
            "partition": args.partition,
            "target": target,
            "connectivity": args.connectivity,
            "components": int(partition.component_count),
            "auc": curve.auc,
            "deletion_order": [int(c) for c in order],
            "oracle_queries": curve.oracle_queries,
        },
        timings_s=timer.stages,
        outputs=outputs,
    ).write(out)
    print(f"{csv_path} auc={curve.auc:.6f}")
    return 0


def _cmd_wsol(args) -> int:
    out = _out_dir(args)
    timer = _Timer()
    gt = read_gt_csv(args.gt)
    heat_dir = Path(args.heatmaps)
    ids = sorted(gt)
    heatmaps, boxes = [], []
    for image_id in ids:
        path = heat_dir / f"{image_id}.npy"
        if not path.is_file():
            raise UsageError(f"missing heatmap {path}")
        heatmaps.append(tensorio.read_npy(path))
        boxes.append(gt[image_id])
    cfg = WsolConfig()
    results = []
    with timer.time("raw"):
        results.append(("raw", max_box_acc_v2(heatmaps, boxes, cfg,
                                              connectivity=args.connectivity)))
    if args.partitions:
        part_dir = Path(args.partitions)
        sp_maps = []
        with timer.time("superpixelify"):
            for image_id, hm in zip(ids, heatmaps):
                partition = _load_partition(
                    str(part_dir / f"{image_id}.npy"), args.partition_connectivity
                )
                sp_maps.append(superpixelify(minmax_normalize(hm), partition))
        with timer.time("nas"):
            results.append(("nas", max_box_acc_v2(sp_maps, boxes, cfg,
                                                  connectivity=args.connectivity)))
    csv_path = out / "wsol_results.csv"
    outputs = [
        _atomic(lambda res, p: write_results_csv(res, p, baseline="raw"), results, csv_path)
    ]
    RunManifest(
        command="wsol",
        config={
            "heatmaps": args.heatmaps,
            "gt": args.gt,
            "partitions": args.partitions,
            "images": ids,
            "connectivity": args.connectivity,
            "renormalized": True,
            "scores": {
                name: {
                    **{f"iou_at_{int(round(d * 100))}": v for d, v in s.per_level.items()},
                    "mean": s.mean,
                }
                for name, s in results
            },
        },
        timings_s=timer.stages,
        outputs=outputs,
    ).write(out)
    for name, scores in results:
        print(f"{name} max_box_acc_v2={scores.mean:.4f}")
    return 0


def _cmd_semantic(args) -> int:
    out = _out_dir(args)
    timer = _Timer()
    oracle = open_oracle(args.oracle)
    if not isinstance(oracle, FileOracle):
        raise UsageError("semantic requires a file:// oracle with stored saliency maps")
    cfg = _nas_config(args, oracle.meta)
    ids = args.images.split(",") if args.images else oracle.image_ids()
    if not ids:
        raise UsageError("no images in the store")
    mats, sals, preds = [], [], []
    with timer.time("features"):
        for image_id in ids:
            acts = oracle.activations_for_id(image_id, cfg.depths)
            mats.append(build_feature_matrix(acts, cfg))
            sals.append(minmax_normalize(oracle.saliency_for_id(args.method, image_id)))
            preds.append(int(np.argmax(oracle.logits_for_id(image_id))))
    with timer.time("fit"):
        model = fit_class_cluster_model(
            mats,
            n_clusters=args.n_clusters,
            sample_cap=args.sample_cap,
            seed=args.seed,
            class_id=args.true_class,
        )
    with timer.time("table"):
        table = cluster_saliency_table(
            mats,
            sals,
            model,
            preds,
            true_class=args.true_class,
            target_cluster=args.target_cluster,
            connectivity=args.connectivity,
            size_weighted=args.size_weighted,
            pooled_other=args.pooled_other,
        )
    csv_path = out / "semantic_table.csv"
    outputs = [
        _atomic(lambda t, p: write_table_csv(t, p, method=args.method), table, csv_path)
    ]
    RunManifest(
        command="semantic",
        config={
            "oracle": args.oracle,
            "images": ids,
            "method": args.method,
            "depths": cfg.depths,
            "k": cfg.k,
            "seed": cfg.seed,
            "n_clusters": args.n_clusters,
            "sample_cap": args.sample_cap,
            "true_class": args.true_class,
            "target_cluster": args.target_cluster,
            "connectivity": args.connectivity,
            "size_weighted": args.size_weighted,
            "pooled_other": args.pooled_other,
            "splits": {
                name: {
                    "images": cells.image_count,
                    "most_salient": cells.most_salient_cluster,
                    "target_mean": cells.target_cluster_mean,
                    "other_mean": cells.other_clusters_mean,
                }
                for name, cells in table.splits.items()
            },
        },
        timings_s=timer.stages,
        outputs=outputs,
    ).write(out)
    print(csv_path)
    return 0


def _cmd_overlay(args) -> int:
    out = _out_dir(args)
    timer = _Timer()
    oracle = open_oracle(args.oracle)
    stem, img = _load_query_image(oracle, args.image)
    base = _nas_config(args, oracle.meta)
    std = standardize(img, oracle.meta)
    acts = oracle.activations(std, base.depths)
    masks = []
    with timer.time("runs"):
        for run in range(args.runs):
            cfg = NasConfig(
                output_h=base.output_h,
                output_w=base.output_w,
                depths=base.depths,
                k=base.k,
                scale_rows=base.scale_rows,
                weight_channels=base.weight_channels,
                seed=base.seed + run,
            )
            clusters = segment(acts, cfg, clusterer=args.clusterer)
            masks.append(boundary_mask(clusters))
    freq = boundary_frequency(masks)
    gray = np.round(freq * 255.0).astype(np.uint8)
    rgb = np.stack([gray, gray, gray], axis=2)
    outputs = [
        _atomic(tensorio.write_npy, freq.astype(np.float32), out / f"overlay_{stem}.npy"),
        _atomic(tensorio.write_image_png, rgb, out / f"overlay_{stem}.png"),
    ]
    RunManifest(
        command="overlay",
        config={
            "oracle": args.oracle,
            "image": args.image,
            "depths": base.depths,
            "k": base.k,
            "seed": base.seed,
            "runs": args.runs,
            "clusterer": args.clusterer,
        },
        timings_s=timer.stages,
        outputs=outputs,
    ).write(out)
    print(out / f"overlay_{stem}.png")
    return 0


def _cmd_bench(args) -> int:
    timer = _Timer()
    oracle = open_oracle(args.oracle)
    cfg = _nas_config(args, oracle.meta)
    h, w, _ = oracle.meta.input_size
    if args.image is not None:
        _, img = _load_query_image(oracle, args.image)
    else:
        rng = np.random.default_rng(cfg.seed)
        img = rng.uniform(0.0, 255.0, size=(h, w, 3)).astype(np.float32)
    std = standardize(img, oracle.meta)
    acts = oracle.activations(std, cfg.depths)

    features_ms, clustering_ms = [], []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        fm = build_feature_matrix(acts, cfg)
        t1 = time.perf_counter()
        if args.clusterer == "kmeans":
            kmeans_fit(fm, cfg.k, seed=cfg.seed)
        else:
            cut_dendrogram(ward_fit(fm), cfg.k)
        t2 = time.perf_counter()
        features_ms.append((t1 - t0) * 1000.0)
        clustering_ms.append((t2 - t1) * 1000.0)
    report = {
        "clusterer": args.clusterer,
        "depths": cfg.depths,
        "k": cfg.k,
        "rows": int(h * w),
        "repeat": args.repeat,
        "features_ms": float(np.mean(features_ms)),
        "clustering_ms": float(np.mean(clustering_ms)),
        "segment_ms": float(np.mean(features_ms) + np.mean(clustering_ms)),
    }
    if args.out:
        out = _out_dir(args)
        RunManifest(
            command="bench",
            config=report,
            timings_s=timer.stages,
            outputs=[],
        ).write(out)
    print(json.dumps(report, sort_keys=True))
    return 0


# --- wiring ---


def _add_common(p, oracle=True, nas=True, connectivity_default=4):
    if oracle:
        p.add_argument("--oracle", required=True, help="file://DIR, http://HOST:PORT, or synthetic://linear")
    if nas:
        p.add_argument("--depths", default="2,3,4", help="comma list of extraction depths")
        p.add_argument("--k", type=int, default=5, help="number of clusters")
        p.add_argument("--no-scale", action="store_true", help="skip row L2 normalization")
        p.add_argument("--no-weight", action="store_true", help="skip 1/(1+c) channel weighting")
        p.add_argument("--clusterer", choices=("kmeans", "ward"), default="kmeans")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=connectivity_default)
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="nasseg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="cluster activations into a label map")
    p.add_argument("--image", required=True, help="PNG path or file-store image id")
    _add_common(p)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("superpixelify", help="average a saliency map over superpixels")
    p.add_argument("--partition", required=True, help="label-map NPY")
    p.add_argument("--saliency", required=True, help="saliency NPY")
    _add_common(p, oracle=False, nas=False)
    p.set_defaults(func=_cmd_superpixelify)

    p = sub.add_parser("lerf", help="least-relevant-first deletion curve")
    p.add_argument("--image", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--saliency", required=True)
    p.add_argument("--target", type=int, default=None, help="class index (default: predicted)")
    p.add_argument("--batch", type=int, default=64)
    _add_common(p, nas=False)
    p.set_defaults(func=_cmd_lerf)

    p = sub.add_parser("aucmax", help="greedy deletion-order AUC maximization")
    p.add_argument("--image", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--batch", type=int, default=64)
    _add_common(p, nas=False)
    p.set_defaults(func=_cmd_aucmax)

    p = sub.add_parser("wsol", help="MaxBoxAccV2 over heatmaps vs ground-truth boxes")
    p.add_argument("--heatmaps", required=True, help="directory of <image_id>.npy maps")
    p.add_argument("--gt", required=True, help="CSV: image_id,x_min,y_min,x_max,y_max")
    p.add_argument("--partitions", default=None,
                   help="directory of <image_id>.npy label maps for the +NAS arm")
    p.add_argument("--partition-connectivity", type=int, choices=(4, 8), default=4)
    _add_common(p, oracle=False, nas=False, connectivity_default=8)
    p.set_defaults(func=_cmd_wsol)

    p = sub.add_parser("semantic", help="class-cluster saliency table")
    p.add_argument("--images", default=None, help="comma list of store image ids (default: all)")
    p.add_argument("--method", default="gcampp", help="stored saliency method name")
    p.add_argument("--true-class", type=int, required=True)
    p.add_argument("--target-cluster", type=int, required=True)
    p.add_argument("--n-clusters", type=int, default=10)
    p.add_argument("--sample-cap", type=int, default=100_000)
    p.add_argument("--size-weighted", action="store_true")
    p.add_argument("--pooled-other", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_semantic)

    p = sub.add_parser("overlay", help="boundary frequency over reseeded runs")
    p.add_argument("--image", required=True)
    p.add_argument("--runs", type=int, default=10)
    _add_common(p)
    p.set_defaults(func=_cmd_overlay)

    p = sub.add_parser("bench", help="time feature building + clustering")
    p.add_argument("--image", default=None)
    p.add_argument("--repeat", type=int, default=10)
    _add_common(p)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("NAS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OracleFailure as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return 2
    except NassegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
