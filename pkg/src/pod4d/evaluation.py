"""Rotated 3D IoU, greedy matching, 40-point interpolated AP and per-class report tables."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import CLASSES, DetectionBox, read_jsonl, transform_boxes  # noqa: F401  (re-export)

DEFAULT_THRESHOLDS = {"car": 0.5, "van": 0.5, "pedestrian": 0.25, "cyclist": 0.25, "traffic_cone": 0.25}
TASKS = ("standard", "predictive")


@dataclass
class EvalConfig:
    iou_thresholds: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    recall_positions: int = 40
    min_gt_points: int = 1  # standard task only
    predictive_min_points: int | None = None  # optional visibility filter on future ground truth

    def __post_init__(self):
        for cls, thr in self.iou_thresholds.items():
            if cls not in CLASSES:
                raise ValueError(f"unknown class {cls!r}")
            if not 0.0 < thr <= 1.0:
                raise ValueError(f"IoU threshold for {cls} must be in (0, 1], got {thr}")
        if self.recall_positions < 1:
            raise ValueError("recall_positions must be >= 1")


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Intersection of two convex polygons (clip given counter-clockwise), by successive half-plane clipping."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        a, b = clip[i], clip[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        inp, out = out, []
        for j in range(len(inp)):
            cur, prev = inp[j], inp[j - 1]
            sc, sp = side(cur), side(prev)
            if sc >= 0:
                if sp < 0:
                    t = sp / (sp - sc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif sp >= 0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def bev_intersection_area(a: DetectionBox, b: DetectionBox) -> float:
    return polygon_area(clip_convex(a.bev_corners(), b.bev_corners()))


def iou_3d(a: DetectionBox, b: DetectionBox) -> float:
    va, vb = a.volume, b.volume
    if va <= 0 or vb <= 0:
        return 0.0
    za0, za1 = a.center[2] - 0.5 * a.dims[2], a.center[2] + 0.5 * a.dims[2]
    zb0, zb1 = b.center[2] - 0.5 * b.dims[2], b.center[2] + 0.5 * b.dims[2]
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0:
        return 0.0
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.dims[0], a.dims[1])
    rb = 0.5 * math.hypot(b.dims[0], b.dims[1])
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) >= ra + rb:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    union = va + vb - inter
    return float(min(1.0, max(0.0, inter / union))) if union > 0 else 0.0


@dataclass
class MatchResult:
    det_scores: np.ndarray  # in processing order (descending score)
    det_tp: np.ndarray  # bool per detection
    det_gt: np.ndarray  # matched gt row or -1
    gt_matched: np.ndarray  # bool per gt

    @property
    def num_tp(self) -> int:
        return int(self.det_tp.sum())

    @property
    def num_fp(self) -> int:
        return int((~self.det_tp).sum())

    @property
    def num_fn(self) -> int:
        return int((~self.gt_matched).sum())


def match_detections(dets, gts, cls: str, threshold: float) -> MatchResult:
    """Greedy by descending score: each detection takes the unmatched same-class
    ground truth of highest IoU when that IoU reaches ``threshold``."""
    dets = [d for d in dets if d.cls == cls]
    gts = [g for g in gts if g.cls == cls]
    order = sorted(range(len(dets)), key=lambda k: -dets[k].score)  # stable for ties
    scores = np.array([dets[k].score for k in order], dtype=np.float64)
    tp = np.zeros(len(order), dtype=bool)
    det_gt = np.full(len(order), -1, dtype=np.int64)
    matched = np.zeros(len(gts), dtype=bool)
    for r, k in enumerate(order):
        best, best_iou = -1, -1.0
        for g, gt in enumerate(gts):
            if matched[g]:
                continue
            iou = iou_3d(dets[k], gt)
            if iou >= threshold and iou > best_iou:
                best, best_iou = g, iou
        if best >= 0:
            matched[best] = True
            tp[r] = True
            det_gt[r] = best
    return MatchResult(scores, tp, det_gt, matched)


def average_precision_r40(scores, tp, num_gt: int, recall_positions: int = 40) -> float | None:
    """Interpolated AP over recall positions k/R, k = 1..R; None when there is no ground truth.

    Detections pooled over frames are ranked by score (stable for ties).
    """
    if num_gt <= 0:
        return None
    scores = np.asarray(scores, dtype=np.float64)
    tp = np.asarray(tp, dtype=bool)
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    precision = ctp / (ctp + cfp)
    recall = ctp / num_gt
    # running max from the right gives max precision at recall >= r
    p_env = np.maximum.accumulate(precision[::-1])[::-1]
    r_grid = np.arange(1, recall_positions + 1) / recall_positions
    pos = np.searchsorted(recall, r_grid - 1e-12, side="left")
    vals = np.where(pos < len(recall), p_env[np.minimum(pos, len(recall) - 1)], 0.0)
    return float(vals.mean())


def evaluate_frames(frames, cfg: EvalConfig | None = None) -> dict:
    """``frames``: iterable of (detections, ground_truth) per frame, already filtered for the task."""
    cfg = cfg or EvalConfig()
    frames = list(frames)
    classes = {}
    for cls in CLASSES:
        thr = cfg.iou_thresholds.get(cls, 0.5)
        scores, tps, num_gt, num_det = [], [], 0, 0
        for dets, gts in frames:
            m = match_detections(dets, gts, cls, thr)
            scores.append(m.det_scores)
            tps.append(m.det_tp)
            num_gt += len(m.gt_matched)
            num_det += len(m.det_tp)
        s = np.concatenate(scores) if scores else np.zeros(0)
        t = np.concatenate(tps) if tps else np.zeros(0, bool)
        ap = average_precision_r40(s, t, num_gt, cfg.recall_positions)
        classes[cls] = {"ap": ap, "num_gt": num_gt, "num_det": num_det, "num_tp": int(t.sum()),
                        "iou_threshold": thr}
    defined = [c["ap"] for c in classes.values() if c["ap"] is not None]
    return {"classes": classes, "mAP": float(np.mean(defined)) if defined else None}


def _annotation_dir(gt_dir: Path) -> Path:
    return gt_dir / "annotations" if (gt_dir / "annotations").is_dir() else gt_dir


def _frame_ids(d: Path) -> set[str]:
    return {p.name[: -len(".jsonl")] for p in d.glob("*.jsonl")}


def _close(a, b, tol=1e-6) -> bool:
    return a is not None and b is not None and abs(float(a) - float(b)) <= tol


def select_ground_truth(gts, task: str, cfg: EvalConfig, horizon: float | None):
    if task == "standard":
        return [g for g in gts if g.time_tag == "current"
                and (g.num_points is None or g.num_points >= cfg.min_gt_points)]
    out = [g for g in gts if g.time_tag == "future" and _close(g.delta_t, horizon)]
    if cfg.predictive_min_points is not None:
        out = [g for g in out if g.num_points is None or g.num_points >= cfg.predictive_min_points]
    return out


def evaluate_run(det_dir, gt_dir, task: str = "standard", cfg: EvalConfig | None = None,
                 horizon: float | None = None) -> dict:
    """Evaluate detection files against annotation files, both named ``<frame_id>.jsonl``.

    For the predictive task the horizon defaults to the one recorded in the
    detections. Frames present on one side only are listed in the report and
    evaluated with an empty list on the missing side.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    cfg = cfg or EvalConfig()
    det_dir, gt_dir = Path(det_dir), _annotation_dir(Path(gt_dir))
    if (det_dir / "detections").is_dir():
        det_dir = det_dir / "detections"
    det_ids, gt_ids = _frame_ids(det_dir), _frame_ids(gt_dir)
    ids = sorted(det_ids | gt_ids)
    tag = "current" if task == "standard" else "future"

    loaded = []
    horizons = set()
    for fid in ids:
        dets = read_jsonl(det_dir / f"{fid}.jsonl") if fid in det_ids else []
        dets = [d for d in dets if d.time_tag == tag]
        horizons.update(round(d.delta_t, 9) for d in dets if d.delta_t is not None)
        gts = read_jsonl(gt_dir / f"{fid}.jsonl") if fid in gt_ids else []
        loaded.append((dets, gts))
    if task == "predictive" and horizon is None:
        if len(horizons) > 1:
            raise ValueError(f"detections mix horizons {sorted(horizons)}; pass one explicitly")
        horizon = horizons.pop() if horizons else None
        if horizon is None:
            raise ValueError("no horizon recorded in detections; pass one explicitly")
    frames = [(dets, select_ground_truth(gts, task, cfg, horizon)) for dets, gts in loaded]
    report = evaluate_frames(frames, cfg)
    report.update({
        "task": task,
        "horizon": horizon,
        "num_frames": len(ids),
        "missing_detections": sorted(gt_ids - det_ids),
        "missing_ground_truth": sorted(det_ids - gt_ids),
        "recall_positions": cfg.recall_positions,
    })
    return report


def format_report(report: dict) -> str:
    """Aligned text table: one row per class plus the mean."""
    title = f"3D AP R{report.get('recall_positions', 40)}  task={report.get('task')}"
    if report.get("horizon") is not None:
        title += f"  horizon={report['horizon']}s"
    lines = [title, f"{'class':<14}{'IoU':>6}{'GT':>8}{'det':>8}{'TP':>8}{'AP':>10}"]
    for cls, c in report["classes"].items():
        ap = "n/a" if c["ap"] is None else f"{100 * c['ap']:.2f}"
        lines.append(f"{cls:<14}{c['iou_threshold']:>6.2f}{c['num_gt']:>8}{c['num_det']:>8}{c['num_tp']:>8}{ap:>10}")
    m = "n/a" if report["mAP"] is None else f"{100 * report['mAP']:.2f}"
    lines.append(f"{'mAP':<14}{'':>30}{m:>10}")
    for key in ("missing_detections", "missing_ground_truth"):
        if report.get(key):
            lines.append(f"{key}: {', '.join(report[key])}")
    return "\n".join(lines) + "\n"


def write_report(out_stem, report: dict) -> None:
    out_stem = Path(out_stem)
    out_stem.with_suffix(".json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    out_stem.with_suffix(".txt").write_text(format_report(report))
