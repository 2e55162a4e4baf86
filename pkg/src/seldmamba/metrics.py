"""SELD evaluation: location-gated detection F-score, class-matched angular
error, relative distance error, and the aggregate ranking score.

Matching is per frame and per class: a minimum-total-angular-error one-to-one
assignment (brute force over permutations; at most three sources per class).
Matched pairs beyond the angular threshold count as both a false positive and
a false negative for the F-score but still contribute to the angular and
distance errors, which are threshold-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np


def wrap_azimuth(az):
    """Wrap degrees into [-180, 180)."""
    return (az + 180.0) % 360.0 - 180.0


@dataclass
class Event:
    class_id: int
    azimuth: float      # degrees in [-180, 180)
    elevation: float    # degrees in [-90, 90]
    distance: float     # meters (> 0 for references)
    track: int = 0

    def __post_init__(self):
        if not -180.0 <= self.azimuth < 180.0:
            raise ValueError(f"azimuth {self.azimuth} outside [-180, 180)")
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        if self.distance < 0:
            raise ValueError(f"distance {self.distance} must be nonnegative")


class EventList:
    """Events per 100 ms frame."""

    def __init__(self, n_frames=0):
        self.n_frames = int(n_frames)
        self._frames: dict[int, list[Event]] = {}

    def add(self, frame, event: Event):
        if frame < 0:
            raise ValueError(f"frame index {frame} must be nonnegative")
        self._frames.setdefault(int(frame), []).append(event)
        self.n_frames = max(self.n_frames, int(frame) + 1)

    def events_at(self, frame):
        return self._frames.get(int(frame), [])

    def active_frames(self):
        return sorted(self._frames)

    @property
    def total_events(self):
        return sum(len(v) for v in self._frames.values())


def unit_vector(azimuth_deg, elevation_deg):
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    return np.array([math.cos(az) * math.cos(el),
                     math.sin(az) * math.cos(el),
                     math.sin(el)])


def angular_error(a, b):
    """Great-circle angle in degrees between two (azimuth, elevation) pairs."""
    dot = float(np.dot(unit_vector(*a), unit_vector(*b)))
    return math.degrees(math.acos(max(-1.0, min(1.0, dot))))


def match_events(pred_events, ref_events):
    """Per-class minimum-cost assignment for one frame.

    Returns (pairs, n_fp, n_fn) where each pair is
    (angular_error_deg, pred_distance, ref_distance).
    """
    pairs = []
    n_fp = n_fn = 0
    classes = {e.class_id for e in pred_events} | {e.class_id for e in ref_events}
    for cls in classes:
        preds = [e for e in pred_events if e.class_id == cls]
        refs = [e for e in ref_events if e.class_id == cls]
        m = min(len(preds), len(refs))
        n_fp += len(preds) - m
        n_fn += len(refs) - m
        if m == 0:
            continue
        short, long_ = (preds, refs) if len(preds) <= len(refs) else (refs, preds)
        best_cost, best_assign = None, None
        for assign in permutations(range(len(long_)), m):
            cost = sum(angular_error((short[i].azimuth, short[i].elevation),
                                     (long_[j].azimuth, long_[j].elevation))
                       for i, j in enumerate(assign))
            if best_cost is None or cost < best_cost:
                best_cost, best_assign = cost, assign
        for i, j in enumerate(best_assign):
            p, r = (short[i], long_[j]) if short is preds else (long_[j], short[i])
            err = angular_error((p.azimuth, p.elevation), (r.azimuth, r.elevation))
            pairs.append((err, p.distance, r.distance))
    return pairs, n_fp, n_fn


def _check_aligned(preds: EventList, refs: EventList):
    if preds.n_frames != refs.n_frames:
        raise ValueError(f"frame counts differ: predictions {preds.n_frames}, "
                         f"references {refs.n_frames}")


def _all_matches(preds, refs):
    _check_aligned(preds, refs)
    pairs, n_fp, n_fn = [], 0, 0
    for frame in sorted(set(preds.active_frames()) | set(refs.active_frames())):
        p, fp, fn = match_events(preds.events_at(frame), refs.events_at(frame))
        pairs.extend(p)
        n_fp += fp
        n_fn += fn
    return pairs, n_fp, n_fn


def compute_f20(preds, refs, ang_thresh=20.0, rel_dist_gate=None):
    """Location-gated detection F-score, micro-averaged over frames and classes.

    ``rel_dist_gate``, when set, additionally requires matched pairs to have
    |d_pred - d_ref| / d_ref <= gate to count as true positives.
    """
    pairs, n_fp, n_fn = _all_matches(preds, refs)
    tp = 0
    for err, d_pred, d_ref in pairs:
        within = err <= ang_thresh
        if within and rel_dist_gate is not None and d_ref > 0:
            within = abs(d_pred - d_ref) / d_ref <= rel_dist_gate
        if within:
            tp += 1
        else:
            n_fp += 1
            n_fn += 1
    denom = 2 * tp + n_fp + n_fn
    return 2.0 * tp / denom if denom else 0.0


def compute_doae(preds, refs):
    """Mean angular error over class-matched pairs, threshold-free.

    Returns (degrees, degenerate) where degenerate flags an empty match set,
    scored as the worst case 180 degrees.
    """
    pairs, _, _ = _all_matches(preds, refs)
    if not pairs:
        return 180.0, True
    return float(np.mean([err for err, _, _ in pairs])), False


def compute_rde(preds, refs):
    """Mean relative distance error |d_pred - d_ref| / d_ref over matched pairs.

    Returns (value, degenerate); an empty match set scores the complete-miss
    sentinel 1.0 (the error of predicting zero distance everywhere).
    """
    pairs, _, _ = _all_matches(preds, refs)
    rel = [abs(dp - dr) / dr for _, dp, dr in pairs if dr > 0]
    if not rel:
        return 1.0, True
    return float(np.mean(rel)), False


def seld_score(f20, doae_deg, rde):
    """Aggregate ranking score: ((1 - F) + DOAE/180 + RDE) / 3, lower is better."""
    if not 0.0 <= f20 <= 1.0:
        raise ValueError(f"f20 {f20} outside [0, 1]")
    if not 0.0 <= doae_deg <= 180.0:
        raise ValueError(f"doae {doae_deg} outside [0, 180]")
    if rde < 0.0:
        raise ValueError(f"rde {rde} must be nonnegative")
    return ((1.0 - f20) + doae_deg / 180.0 + rde) / 3.0


@dataclass
class MetricReport:
    f20: float
    doae: float
    rde: float
    seld: float
    n_pred_events: int = 0
    n_ref_events: int = 0
    degenerate_doae: bool = False
    degenerate_rde: bool = False
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"f20": self.f20, "doae": self.doae, "rde": self.rde,
             "seld_score": self.seld, "n_pred_events": self.n_pred_events,
             "n_ref_events": self.n_ref_events,
             "degenerate_doae": self.degenerate_doae,
             "degenerate_rde": self.degenerate_rde}
        d.update(self.extras)
        return d

    def format_text(self):
        lines = [f"F20      : {self.f20:.4f}",
                 f"DOAE     : {self.doae:.2f} deg"
                 + (" (no matches; worst case)" if self.degenerate_doae else ""),
                 f"RDE      : {self.rde:.4f}"
                 + (" (no matches; sentinel)" if self.degenerate_rde else ""),
                 f"SELD     : {self.seld:.4f}",
                 f"events   : {self.n_pred_events} predicted / "
                 f"{self.n_ref_events} reference"]
        return "\n".join(lines)


def evaluate_event_lists(preds: EventList, refs: EventList, ang_thresh=20.0,
                         rel_dist_gate=None, macro=False) -> MetricReport:
    """Score predictions against references and aggregate everything."""
    if macro:
        f20 = _macro_f20(preds, refs, ang_thresh, rel_dist_gate)
    else:
        f20 = compute_f20(preds, refs, ang_thresh, rel_dist_gate)
    doae, deg_d = compute_doae(preds, refs)
    rde, deg_r = compute_rde(preds, refs)
    return MetricReport(f20=f20, doae=doae, rde=rde,
                        seld=seld_score(f20, doae, rde),
                        n_pred_events=preds.total_events,
                        n_ref_events=refs.total_events,
                        degenerate_doae=deg_d, degenerate_rde=deg_r)


def _macro_f20(preds, refs, ang_thresh, rel_dist_gate):
    """Class-averaged variant of the detection F-score."""
    _check_aligned(preds, refs)
    per_class = {}
    for frame in sorted(set(preds.active_frames()) | set(refs.active_frames())):
        pe, re = preds.events_at(frame), refs.events_at(frame)
        for cls in {e.class_id for e in pe} | {e.class_id for e in re}:
            pairs, fp, fn = match_events([e for e in pe if e.class_id == cls],
                                         [e for e in re if e.class_id == cls])
            tp = 0
            for err, d_pred, d_ref in pairs:
                within = err <= ang_thresh
                if within and rel_dist_gate is not None and d_ref > 0:
                    within = abs(d_pred - d_ref) / d_ref <= rel_dist_gate
                if within:
                    tp += 1
                else:
                    fp += 1
                    fn += 1
            agg = per_class.setdefault(cls, [0, 0, 0])
            agg[0] += tp
            agg[1] += fp
            agg[2] += fn
    scores = []
    for tp, fp, fn in per_class.values():
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores)) if scores else 0.0
