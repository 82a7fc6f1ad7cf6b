"""CLEAR MOT and AMOTA/AMOTP evaluation plus location/velocity error analysis.

Boxes are matched by BEV center distance within ``match_radius_m`` and
only within the same class. A ground-truth object keeps its previous
track if that track is still within the radius; the rest is solved with
the Hungarian matcher.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .assignment import CostMatrix, hungarian


@dataclass(frozen=True)
class GTBox:
    object_id: int
    class_id: int
    x: float
    y: float


@dataclass(frozen=True)
class HypBox:
    track_id: int
    class_id: int
    x: float
    y: float
    score: float = 1.0


@dataclass
class FrameMatch:
    pairs: List[Tuple[int, int]]  # (gt object id, track id)
    distances: List[float]
    fp: int
    fn: int
    switches: List[int]  # gt ids whose track id changed
    gt_ids: List[int]

    @property
    def num_gt(self) -> int:
        return len(self.gt_ids)

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def ids(self) -> int:
        return len(self.switches)


def _dist(g: GTBox, h: HypBox) -> float:
    return math.hypot(g.x - h.x, g.y - h.y)


def match_frame(
    gt: Sequence[GTBox],
    hyp: Sequence[HypBox],
    match_radius_m: float,
    carried_matches: Mapping[int, int],
) -> Tuple[FrameMatch, Dict[int, int]]:
    """Match one frame; returns the result and the updated gt -> track map.

    ``carried_matches`` maps each ground-truth id to the last track id it
    was matched with (across any gap), which is what identity switches are
    measured against.
    """
    hyp_index = {h.track_id: k for k, h in enumerate(hyp)}
    pairs: List[Tuple[int, int]] = []
    dists: List[float] = []
    used_g, used_h = set(), set()
    for gi, g in enumerate(gt):
        tid = carried_matches.get(g.object_id)
        k = hyp_index.get(tid) if tid is not None else None
        if k is None or k in used_h:
            continue
        h = hyp[k]
        d = _dist(g, h)
        if h.class_id == g.class_id and d <= match_radius_m:
            used_g.add(gi)
            used_h.add(k)
            pairs.append((gi, k))
            dists.append(d)

    rg = [i for i in range(len(gt)) if i not in used_g]
    rh = [k for k in range(len(hyp)) if k not in used_h]
    if rg and rh:
        g_xy = np.array([(gt[i].x, gt[i].y) for i in rg])
        h_xy = np.array([(hyp[k].x, hyp[k].y) for k in rh])
        values = np.sqrt(((g_xy[:, None] - h_xy[None]) ** 2).sum(-1))
        g_cls = np.array([gt[i].class_id for i in rg])[:, None]
        h_cls = np.array([hyp[k].class_id for k in rh])[None, :]
        mask = (values <= match_radius_m) & (g_cls == h_cls)
        if mask.any():
            for a, b in hungarian(CostMatrix(values, mask)).pairs:
                pairs.append((rg[a], rh[b]))
                dists.append(float(values[a, b]))

    new_carried = dict(carried_matches)
    switches = []
    id_pairs = []
    for (gi, k), d in zip(pairs, dists):
        gid, tid = gt[gi].object_id, hyp[k].track_id
        prev = carried_matches.get(gid)
        if prev is not None and prev != tid:
            switches.append(gid)
        new_carried[gid] = tid
        id_pairs.append((gid, tid))
    result = FrameMatch(
        pairs=id_pairs,
        distances=dists,
        fp=len(hyp) - len(pairs),
        fn=len(gt) - len(pairs),
        switches=switches,
        gt_ids=[g.object_id for g in gt],
    )
    return result, new_carried


def match_sequence(
    gt_frames: Sequence[Sequence[GTBox]],
    hyp_frames: Sequence[Sequence[HypBox]],
    match_radius_m: float = 2.0,
) -> List[FrameMatch]:
    if len(gt_frames) != len(hyp_frames):
        raise ValueError("ground truth and hypotheses cover a different number of frames")
    carried: Dict[int, int] = {}
    out = []
    for gt, hyp in zip(gt_frames, hyp_frames):
        res, carried = match_frame(gt, hyp, match_radius_m, carried)
        out.append(res)
    return out


@dataclass(frozen=True)
class ClearMot:
    mota: float
    motp_m: float
    ids: int
    frag: int
    mt: int
    ml: int
    recall: float
    precision: float
    tp: int
    fp: int
    fn: int
    num_gt: int


def clear_mot(results: Sequence[FrameMatch]) -> ClearMot:
    """Aggregate per-frame matches into CLEAR MOT statistics.

    MT / ML count objects matched in at least 80% / at most 20% of the
    frames they are present in; FRAG counts resumptions after a tracked
    segment was interrupted.
    """
    num_gt = sum(r.num_gt for r in results)
    if num_gt == 0:
        raise ValueError("undefined MOTA: no ground-truth objects")
    tp = sum(r.tp for r in results)
    fp = sum(r.fp for r in results)
    fn = sum(r.fn for r in results)
    ids = sum(r.ids for r in results)
    dist_sum = sum(sum(r.distances) for r in results)
    life: Dict[int, int] = {}
    hit: Dict[int, int] = {}
    segments: Dict[int, int] = {}
    prev_state: Dict[int, bool] = {}
    for r in results:
        matched = {g for g, _ in r.pairs}
        for g in r.gt_ids:
            life[g] = life.get(g, 0) + 1
            on = g in matched
            if on:
                hit[g] = hit.get(g, 0) + 1
                if not prev_state.get(g, False):
                    segments[g] = segments.get(g, 0) + 1
            prev_state[g] = on
    mt = sum(1 for g, n in life.items() if hit.get(g, 0) >= 0.8 * n)
    ml = sum(1 for g, n in life.items() if hit.get(g, 0) <= 0.2 * n)
    frag = sum(max(0, s - 1) for s in segments.values())
    return ClearMot(
        mota=1.0 - (fn + fp + ids) / num_gt,
        motp_m=dist_sum / tp if tp else float("nan"),
        ids=ids,
        frag=frag,
        mt=mt,
        ml=ml,
        recall=tp / num_gt,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        tp=tp,
        fp=fp,
        fn=fn,
        num_gt=num_gt,
    )


def motar(c: ClearMot) -> float:
    """Recall-normalized MOTA, floored at 0.

    Uses the achieved recall of the run, so ``FN - (1 - r) * P`` vanishes
    and the expression reduces to ``1 - (IDS + FP) / TP``.
    """
    if c.tp == 0:
        return 0.0
    return max(0.0, 1.0 - (c.ids + c.fp) / c.tp)


@dataclass(frozen=True)
class RecallRow:
    recall_threshold: float
    score_threshold: float
    recall: float
    motar: float
    motp_m: float
    tp: int
    fp: int
    fn: int
    ids: int
    reachable: bool


def _filter(hyp_frames, threshold):
    return [[h for h in frame if h.score >= threshold] for frame in hyp_frames]


def recall_sweep(
    gt_frames: Sequence[Sequence[GTBox]],
    hyp_frames: Sequence[Sequence[HypBox]],
    match_radius_m: float = 2.0,
    n_thresholds: int = 40,
    recall_thresholds: Optional[Sequence[float]] = None,
) -> List[RecallRow]:
    """Score-thresholded re-evaluations at a grid of target recalls.

    For target recall ``r`` the score threshold is the score of the
    ``ceil(r * P)``-th best true positive of the unfiltered run; boxes
    below it are dropped and the sequence is matched again. Targets the
    unfiltered run cannot reach are returned with ``reachable=False``.
    """
    if recall_thresholds is None:
        recall_thresholds = [k / n_thresholds for k in range(1, n_thresholds + 1)]
    full = match_sequence(gt_frames, hyp_frames, match_radius_m)
    num_gt = sum(r.num_gt for r in full)
    tp_scores = []
    for res, hyp in zip(full, hyp_frames):
        score_of = {h.track_id: h.score for h in hyp}
        tp_scores.extend(score_of[t] for _, t in res.pairs)
    tp_scores.sort(reverse=True)

    cache: Dict[float, ClearMot] = {}
    rows = []
    for r in recall_thresholds:
        need = math.ceil(r * num_gt - 1e-9)
        if need > len(tp_scores) or num_gt == 0:
            rows.append(RecallRow(r, float("nan"), float("nan"), float("nan"), float("nan"),
                                  0, 0, 0, 0, False))
            continue
        thr = tp_scores[need - 1] if need > 0 else -math.inf
        if thr not in cache:
            cache[thr] = clear_mot(match_sequence(gt_frames, _filter(hyp_frames, thr), match_radius_m))
        c = cache[thr]
        rows.append(RecallRow(r, thr, c.recall, motar(c), c.motp_m, c.tp, c.fp, c.fn, c.ids,
                              c.tp > 0))
    return rows


def amota_from_rows(rows: Sequence[RecallRow]) -> Tuple[float, float]:
    """Average MOTAR and MOTP over the reachable rows."""
    good = [r for r in rows if r.reachable]
    if not good:
        raise ValueError("no threshold achieves positive recall")
    return (
        float(np.mean([r.motar for r in good])),
        float(np.mean([r.motp_m for r in good])),
    )


def amota(
    gt_frames: Sequence[Sequence[GTBox]],
    hyp_frames: Sequence[Sequence[HypBox]],
    match_radius_m: float = 2.0,
    n_thresholds: int = 40,
    recall_thresholds: Optional[Sequence[float]] = None,
) -> Tuple[float, float, List[RecallRow]]:
    rows = recall_sweep(gt_frames, hyp_frames, match_radius_m, n_thresholds, recall_thresholds)
    a, p = amota_from_rows(rows)
    return a, p, rows


@dataclass(frozen=True)
class MetricsReport:
    mota: float
    motp_m: float
    ids: int
    frag: int
    mt: int
    ml: int
    recall: float
    precision: float
    amota: float
    amotp_m: float
    tp: int
    fp: int
    fn: int
    num_gt: int
    per_recall_rows: Tuple[RecallRow, ...] = ()


def evaluate(
    gt_frames: Sequence[Sequence[GTBox]],
    hyp_frames: Sequence[Sequence[HypBox]],
    match_radius_m: float = 2.0,
    n_thresholds: int = 40,
) -> MetricsReport:
    """CLEAR MOT on all boxes plus the AMOTA sweep.

    A run with no reachable recall threshold reports ``amota = 0`` and a
    NaN ``amotp_m``.
    """
    c = clear_mot(match_sequence(gt_frames, hyp_frames, match_radius_m))
    rows = recall_sweep(gt_frames, hyp_frames, match_radius_m, n_thresholds)
    try:
        a, p = amota_from_rows(rows)
    except ValueError:
        a, p = 0.0, float("nan")
    return MetricsReport(c.mota, c.motp_m, c.ids, c.frag, c.mt, c.ml, c.recall, c.precision,
                         a, p, c.tp, c.fp, c.fn, c.num_gt, tuple(rows))


@dataclass(frozen=True)
class Histogram:
    edges: Tuple[float, ...]
    counts: Tuple[int, ...]


@dataclass(frozen=True)
class QualityAnalysis:
    loc_error_histogram: Histogram
    vel_error_histogram: Histogram
    pearson_r: float
    spearman_rho: float
    degenerate: bool
    n_samples: int
    scatter_sample: Tuple[Tuple[float, float], ...]


def _reservoir(pairs, k, rng):
    sample = []
    for i, item in enumerate(pairs):
        if i < k:
            sample.append(item)
        else:
            j = int(rng.integers(0, i + 1))
            if j < k:
                sample[j] = item
    return sample


def analyze_quality(
    loc_errors: Sequence[float],
    vel_errors: Sequence[float],
    bins: int = 30,
    sample_size: int = 1000,
    seed: int = 0,
) -> QualityAnalysis:
    """Histograms and correlation of location vs velocity error magnitudes."""
    loc = np.asarray(loc_errors, dtype=float)
    vel = np.asarray(vel_errors, dtype=float)
    if loc.shape != vel.shape or loc.ndim != 1:
        raise ValueError("error series must be 1D and of equal length")
    if loc.size < 2:
        raise ValueError("need at least 2 samples")
    degenerate = bool(np.ptp(loc) == 0 or np.ptp(vel) == 0)
    if degenerate:
        r = rho = 0.0
    else:
        r = float(np.clip(stats.pearsonr(loc, vel)[0], -1.0, 1.0))
        rho = float(np.clip(stats.spearmanr(loc, vel)[0], -1.0, 1.0))
    hists = []
    for series in (loc, vel):
        counts, edges = np.histogram(series, bins=bins)
        hists.append(Histogram(tuple(float(e) for e in edges), tuple(int(c) for c in counts)))
    rng = np.random.default_rng(seed)
    sample = _reservoir(zip(loc.tolist(), vel.tolist()), sample_size, rng)
    return QualityAnalysis(hists[0], hists[1], r, rho, degenerate, int(loc.size), tuple(sample))
