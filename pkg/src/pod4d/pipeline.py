"""Dataset generation and per-frame execution of the full chain:
ground -> compensation -> virtual future -> 4D voxels -> encoder -> BEV -> decoder."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bevmap import densify_bev, dump_bev, separate_temporal
from .boxes import DetectionBox, write_jsonl
from .config import RunConfig
from .decode import decode_frame
from .preprocess import TwoFramePoints, compensate_velocity, extract_ground, generate_virtual_future
from .sim import (GROUND_LABEL, PointCloudFrame, Scene, generate_scene, ground_truth_boxes, read_frame,
                  scan_frame, write_frame)
from .sparse4d.backbone import init_backbone_params, spconv4d_backbone
from .sparse4d.tensor import SparseTensor4D
from .sparse4d.weights import load_bundle
from .voxelizer import project_features, voxelize_4d
from .window4d import block_param_shapes, dsvt4d_block, init_block_params

log = logging.getLogger(__name__)

STAGES = ("preprocess", "voxelize", "encoder", "bev", "decode")


def frame_id(scene: int, frame: int) -> str:
    return f"s{scene:04d}_f{frame:03d}"


def _dump_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")
    tmp.replace(path)


# ---------------------------------------------------------------- dataset

def annotate_frame(scene: Scene, t: float, frame: PointCloudFrame, horizons, lidar, fid: str) -> list[DetectionBox]:
    """Current boxes with their point counts, plus future boxes per horizon in the current ego frame."""
    counts = np.bincount(frame.labels[frame.labels != GROUND_LABEL], minlength=len(scene.actors))
    boxes = ground_truth_boxes(scene, t, t, fid)
    for b in boxes:
        b.num_points = int(counts[b.actor_id])
    for h in horizons:
        fut_frame = scan_frame(scene, t + h, lidar)
        fut_counts = np.bincount(fut_frame.labels[fut_frame.labels != GROUND_LABEL], minlength=len(scene.actors))
        fut = ground_truth_boxes(scene, t + h, t, fid)
        for b in fut:
            b.delta_t = float(h)
            b.num_points = int(fut_counts[b.actor_id])
        boxes.extend(fut)
    return boxes


def simulate_dataset(cfg: RunConfig, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(exist_ok=True)
    (out / "scenes").mkdir(exist_ok=True)
    ds = cfg.dataset
    scene_cfg, lidar = cfg.scene, cfg.lidar
    horizons = [float(h) for h in ds["horizons"]]
    ids = []
    for s in range(int(ds["scenes"])):
        scene = generate_scene(scene_cfg, cfg.seed * 100003 + s)
        _dump_json(out / "scenes" / f"s{s:04d}.json", scene.to_dict())
        for f in range(int(ds["frames_per_scene"])):
            fid = frame_id(s, f)
            t = f * float(ds["frame_interval"])
            frame = scan_frame(scene, t, lidar)
            write_frame(out / "frames" / fid, frame)
            write_jsonl(out / "annotations" / f"{fid}.jsonl", annotate_frame(scene, t, frame, horizons, lidar, fid))
            ids.append(fid)
    manifest = {"frame_ids": ids, "horizons": horizons, "seed": cfg.seed, "config": cfg.to_dict()}
    _dump_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------- weights

def vfe_param_shapes(cfg: RunConfig, pipeline: str) -> dict[str, tuple]:
    return {"vfe.weight": (cfg.grid(pipeline).feature_dim, cfg.vfe_channels), "vfe.bias": (cfg.vfe_channels,)}


def encoder_param_shapes(cfg: RunConfig, pipeline: str) -> dict[str, tuple]:
    if pipeline == "spconv4d":
        enc = cfg.backbone.param_shapes()
    else:
        enc = block_param_shapes(cfg.window)
    shapes = vfe_param_shapes(cfg, pipeline)
    shapes.update({f"encoder.{k}": v for k, v in enc.items()})
    return shapes


def init_weights(cfg: RunConfig, pipeline: str) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 7])
    fdim = cfg.grid(pipeline).feature_dim
    params = {
        "vfe.weight": rng.normal(0.0, np.sqrt(2.0 / fdim), (fdim, cfg.vfe_channels)),
        "vfe.bias": np.zeros(cfg.vfe_channels),
    }
    if pipeline == "spconv4d":
        enc = init_backbone_params(cfg.backbone, cfg.seed)
    else:
        enc = init_block_params(cfg.window, cfg.seed)
    params.update({f"encoder.{k}": v for k, v in enc.items()})
    return params


def load_weights(cfg: RunConfig, pipeline: str) -> tuple[dict[str, np.ndarray], dict]:
    """Bundle from the config when given, otherwise seeded initialization."""
    if cfg.weights_path is not None:
        params = load_bundle(cfg.weights_path, encoder_param_shapes(cfg, pipeline))
        source = {"kind": "bundle", "path": str(cfg.weights_path)}
    else:
        params = init_weights(cfg, pipeline)
        source = {"kind": "seeded", "seed": cfg.seed}
    digest = hashlib.sha256()
    for name in sorted(params):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    source["sha256"] = digest.hexdigest()
    return params, source


def _strip(params: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


# ---------------------------------------------------------------- per frame

def preprocess_frame(frame: PointCloudFrame, cfg: RunConfig, horizon: float) -> TwoFramePoints:
    ground = extract_ground(frame, cfg.ground)
    comp = compensate_velocity(frame, ground, method=cfg.compensation_method)
    return generate_virtual_future(comp, horizon, frame.sensor_origin)


def process_frame(frame: PointCloudFrame, cfg: RunConfig, pipeline: str, horizon: float, params: dict,
                  fid: str = "", bev_dir: Path | None = None):
    """Returns (current boxes, future boxes, stage timings in seconds, stats)."""
    timings = {}
    t0 = time.perf_counter()
    tf = preprocess_frame(frame, cfg, horizon)
    t1 = time.perf_counter()
    timings["preprocess"] = t1 - t0

    grid = cfg.grid(pipeline)
    voxels = voxelize_4d(tf, grid)
    voxels = project_features(voxels, params["vfe.weight"], params["vfe.bias"])
    x = SparseTensor4D.from_voxels(voxels)
    t2 = time.perf_counter()
    timings["voxelize"] = t2 - t1

    enc = _strip(params, "encoder.")
    y = spconv4d_backbone(x, enc, cfg.backbone) if pipeline == "spconv4d" else dsvt4d_block(x, enc, cfg.window)
    t3 = time.perf_counter()
    timings["encoder"] = t3 - t2

    cur_t, fut_t = separate_temporal(y)
    stride = np.array(grid.grid_shape[:2]) / np.array(y.spatial_shape[:2])
    res = tuple(np.array(grid.voxel_size[:2]) * stride)
    mode = cfg.bev_mode(pipeline)
    bevs = [densify_bev(cur_t, mode, res, grid.origin[:2], "current", 0.0),
            densify_bev(fut_t, mode, res, grid.origin[:2], "future", horizon)]
    if bev_dir is not None:
        for b in bevs:
            dump_bev(bev_dir / f"{fid}.{b.time_tag}.bev", b)
    t4 = time.perf_counter()
    timings["bev"] = t4 - t3

    t_ref = float(frame.timestamp)
    cur, fut = decode_frame(tf, cfg.decode, fid, t_ref)
    timings["decode"] = time.perf_counter() - t4

    stats = {
        "points": len(frame),
        "virtual_points": int(tf.n_current),
        "voxels": len(voxels),
        "encoder_sites": len(y),
        "encoder_shape": list(y.spatial_shape),
        "bev_shape": list(bevs[0].shape),
        "bev_occupied": [int(b.occupied().sum()) for b in bevs],
        "ground_mean_v": tf.ground_mean_v,
        "degraded": bool(tf.degraded),
        "current_boxes": len(cur),
        "future_boxes": len(fut),
    }
    return cur, fut, timings, stats


# ---------------------------------------------------------------- run

_WORKER: dict = {}


def _worker_init(raw_cfg: dict, pipeline: str):
    cfg = RunConfig(raw_cfg)
    params, _ = load_weights(cfg, pipeline)
    _WORKER.update(cfg=cfg, pipeline=pipeline, params=params)


def _run_one(args):
    fid, frames_dir, out_dir, horizon, dump = args
    cfg, pipeline, params = _WORKER["cfg"], _WORKER["pipeline"], _WORKER["params"]
    try:
        frame = read_frame(Path(frames_dir) / fid)
        bev_dir = Path(out_dir) / "bev" if dump else None
        cur, fut, timings, stats = process_frame(frame, cfg, pipeline, horizon, params, fid, bev_dir)
        write_jsonl(Path(out_dir) / "detections" / f"{fid}.jsonl", cur + fut)
        return {"frame_id": fid, "ok": True, "timings": timings, "stats": stats}
    except Exception as exc:  # frame-level failure: record and continue
        log.error("frame %s failed: %s", fid, exc)
        return {"frame_id": fid, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def dataset_frame_ids(dataset: Path) -> list[str]:
    manifest = dataset / "manifest.json"
    if manifest.exists():
        return list(json.loads(manifest.read_text())["frame_ids"])
    return sorted(p.name[:-len(".bin")] for p in (dataset / "frames").glob("*.bin") if not p.name.endswith(".labels.bin"))


def run_dataset(cfg: RunConfig, dataset: str | Path, out_dir: str | Path, workers: int = 1) -> dict:
    dataset, out = Path(dataset), Path(out_dir)
    if not (dataset / "frames").is_dir():
        raise FileNotFoundError(f"{dataset} has no frames/ directory")
    (out / "detections").mkdir(parents=True, exist_ok=True)
    dump = bool(cfg.raw["bev"].get("dump"))
    if dump:
        (out / "bev").mkdir(exist_ok=True)
    ids = dataset_frame_ids(dataset)
    pipeline, horizon = cfg.pipeline, cfg.horizon
    _, source = load_weights(cfg, pipeline)
    jobs = [(fid, str(dataset / "frames"), str(out), horizon, dump) for fid in ids]

    if workers <= 1 or len(jobs) <= 1:
        _worker_init(cfg.to_dict(), pipeline)
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(cfg.to_dict(), pipeline)) as pool:
            results = list(pool.map(_run_one, jobs))

    failures = [{"frame_id": r["frame_id"], "error": r["error"]} for r in results if not r["ok"]]
    ok = [r for r in results if r["ok"]]
    manifest = {
        "pipeline": pipeline,
        "horizon": horizon,
        "weights": source,
        "frame_ids": ids,
        "failures": failures,
        "stats": {r["frame_id"]: r["stats"] for r in ok},
        "config": cfg.to_dict(),
    }
    _dump_json(out / "run_manifest.json", manifest)
    timing = timing_summary({r["frame_id"]: r["timings"] for r in ok}, pipeline)
    _dump_json(out / "timings.json", timing)
    (out / "timings.txt").write_text(format_timings([timing]))
    return manifest


def timing_summary(per_frame: dict, pipeline: str) -> dict:
    rows = list(per_frame.values())
    med = {s: (float(np.median([r[s] for r in rows])) if rows else None) for s in STAGES}
    total = [sum(r[s] for s in STAGES) for r in rows]
    return {"pipeline": pipeline, "frames": len(rows), "median_s": med,
            "median_total_s": float(np.median(total)) if total else None,
            "frames_per_second": (1.0 / float(np.median(total))) if total else None,
            "per_frame": per_frame}


def format_timings(summaries: list[dict]) -> str:
    head = f"{'network':<10}" + "".join(f"{s + ' ms':>14}" for s in STAGES) + f"{'total ms':>12}{'FPS':>8}"
    lines = [head]
    for t in summaries:
        cells = "".join(f"{1e3 * t['median_s'][s]:>14.1f}" if t["median_s"][s] is not None else f"{'n/a':>14}"
                        for s in STAGES)
        tot = t["median_total_s"]
        lines.append(f"{t['pipeline']:<10}{cells}"
                     + (f"{1e3 * tot:>12.1f}{1.0 / tot:>8.2f}" if tot else f"{'n/a':>12}{'n/a':>8}"))
    return "\n".join(lines) + "\n"
