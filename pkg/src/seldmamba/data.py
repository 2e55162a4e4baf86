"""Synthetic FOA scenes for closed-loop training, track-wise target encoding,
fixed-length segmenting, and label CSV I/O.

Each event is a class-distinctive band-limited tone complex encoded to FOA
with plane-wave gains (W, X, Y, Z) = (1, cos az cos el, sin az cos el, sin el)
in ACN order, amplitude scaled by 1 / max(distance, 0.3).  Sources are static
for the duration of an event; distance is carried by level only.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_container, save_container
from .features import FoaClip
from .metrics import Event, EventList, unit_vector, wrap_azimuth
from .objective import FrameTargets

LABEL_FRAME_SECONDS = 0.1
MAX_CONCURRENT = 3


@dataclass
class EventLabel:
    class_id: int
    onset: float        # seconds
    offset: float       # seconds
    azimuth: float      # degrees in [-180, 180)
    elevation: float    # degrees in [-90, 90]
    distance: float     # meters > 0

    def __post_init__(self):
        if self.onset >= self.offset:
            raise ValueError(f"event onset {self.onset} must precede offset {self.offset}")
        if self.distance <= 0:
            raise ValueError(f"event distance {self.distance} must be positive")


@dataclass
class SceneSpec:
    seed: int = 0
    duration: float = 20.0
    n_events: int = 6
    n_classes: int = 13
    azimuth_range: tuple = (-180.0, 180.0)
    elevation_range: tuple = (-60.0, 60.0)
    distance_range: tuple = (0.5, 3.5)
    snr_db_range: tuple = (20.0, 30.0)
    event_duration_range: tuple = (1.0, 4.0)
    sample_rate: int = 24000


def class_band(class_id, n_classes, sample_rate=24000):
    """Carrier band for a class: log-spaced centers, +-8% width."""
    lo, hi = 250.0, min(9000.0, 0.375 * sample_rate)
    center = lo * (hi / lo) ** (class_id / max(n_classes - 1, 1))
    return 0.92 * center, 1.08 * center


def _event_signal(rng, class_id, n_classes, n_samples, sample_rate):
    """Tone complex of three partials inside the class band with a slow
    amplitude modulation and 10 ms onset/offset ramps."""
    f_lo, f_hi = class_band(class_id, n_classes, sample_rate)
    center = math.sqrt(f_lo * f_hi)
    t = np.arange(n_samples) / sample_rate
    sig = np.zeros(n_samples)
    for rel in (f_lo / center, 1.0, f_hi / center):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        sig += np.sin(2.0 * np.pi * center * rel * t + phase)
    am_rate = rng.uniform(2.0, 6.0)
    sig *= 0.8 + 0.2 * np.sin(2.0 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    ramp = min(int(0.01 * sample_rate), n_samples // 2)
    if ramp > 0:
        env = np.ones(n_samples)
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[-ramp:] = np.linspace(1.0, 0.0, ramp)
        sig *= env
    return sig / 3.0


def _foa_gains(azimuth_deg, elevation_deg):
    v = unit_vector(azimuth_deg, elevation_deg)
    return np.array([1.0, v[0], v[1], v[2]])


def synth_scene(spec: SceneSpec):
    """Generate one scene: (FoaClip, [EventLabel]), deterministic per seed."""
    if spec.duration <= 0 or spec.n_events < 0:
        raise ValueError(f"invalid scene spec: duration {spec.duration}, "
                         f"n_events {spec.n_events}")
    rng = np.random.default_rng(spec.seed)
    n_samples = int(round(spec.duration * spec.sample_rate))
    grid = np.zeros(int(math.ceil(spec.duration / 0.01)) + 1, dtype=np.int64)
    mix = np.zeros((4, n_samples))
    events = []
    for _ in range(spec.n_events):
        dur = rng.uniform(*spec.event_duration_range)
        dur = min(dur, spec.duration)
        placed = False
        for _attempt in range(200):
            onset = rng.uniform(0.0, spec.duration - dur)
            g0, g1 = int(onset / 0.01), int(math.ceil((onset + dur) / 0.01))
            if np.all(grid[g0:g1] < MAX_CONCURRENT):
                grid[g0:g1] += 1
                placed = True
                break
        if not placed:
            raise ValueError(f"cannot place event {len(events)} without exceeding "
                             f"{MAX_CONCURRENT} concurrent sources "
                             "(overlap constraint infeasible)")
        label = EventLabel(
            class_id=int(rng.integers(0, spec.n_classes)),
            onset=onset, offset=onset + dur,
            azimuth=wrap_azimuth(rng.uniform(*spec.azimuth_range)),
            elevation=rng.uniform(*spec.elevation_range),
            distance=rng.uniform(*spec.distance_range))
        events.append(label)
        start = int(round(onset * spec.sample_rate))
        stop = min(int(round((onset + dur) * spec.sample_rate)), n_samples)
        sig = _event_signal(rng, label.class_id, spec.n_classes, stop - start,
                            spec.sample_rate)
        amp = 0.5 / max(label.distance, 0.3)
        mix[:, start:stop] += _foa_gains(label.azimuth, label.elevation)[:, None] \
            * (amp * sig)[None, :]

    snr_db = rng.uniform(*spec.snr_db_range)
    signal_power = float(np.mean(mix[0] ** 2))
    if signal_power > 0:
        noise_power = signal_power / (10.0 ** (snr_db / 10.0))
    else:
        noise_power = 1e-6
    mix += rng.normal(scale=math.sqrt(noise_power), size=mix.shape)
    events.sort(key=lambda ev: (ev.onset, ev.class_id))
    return FoaClip(mix, sample_rate=spec.sample_rate), events


# ---------------------------------------------------------------------------
# target encoding
# ---------------------------------------------------------------------------

def encode_targets(events, n_frames, n_classes,
                   frame_seconds=LABEL_FRAME_SECONDS) -> FrameTargets:
    """Track-wise tensors from event labels.

    Per frame, the events whose span covers the frame center are assigned to
    tracks in onset order (ties broken by class id).  More than three
    concurrent events is an error.
    """
    sed = np.zeros((MAX_CONCURRENT, n_frames, n_classes))
    doa = np.zeros((MAX_CONCURRENT, n_frames, 3))
    dist = np.zeros((MAX_CONCURRENT, n_frames, 1))
    active = np.zeros((MAX_CONCURRENT, n_frames), dtype=bool)
    ordered = sorted(events, key=lambda ev: (ev.onset, ev.class_id))
    for frame in range(n_frames):
        center = (frame + 0.5) * frame_seconds
        live = [ev for ev in ordered if ev.onset <= center < ev.offset]
        if len(live) > MAX_CONCURRENT:
            raise ValueError(f"{len(live)} concurrent events at frame {frame}; "
                             f"at most {MAX_CONCURRENT} are representable")
        for track, ev in enumerate(live):
            if ev.class_id >= n_classes:
                raise ValueError(f"class id {ev.class_id} >= n_classes {n_classes}")
            sed[track, frame, ev.class_id] = 1.0
            doa[track, frame] = unit_vector(ev.azimuth, ev.elevation)
            dist[track, frame, 0] = ev.distance
            active[track, frame] = True
    return FrameTargets(sed=sed, doa=doa, dist=dist, active=active)


def segment(clip: FoaClip, events, seconds=5.0, n_classes=13,
            frame_seconds=LABEL_FRAME_SECONDS):
    """Cut a clip into non-overlapping fixed-length segments.

    The trailing remainder is zero-padded to a full segment.  Event labels are
    clipped to segment boundaries and re-based to segment time.  Returns a
    list of (FoaClip, FrameTargets).
    """
    seg_samples = int(round(seconds * clip.sample_rate))
    if clip.n_samples < seg_samples:
        raise ValueError(f"clip of {clip.duration:.2f} s is shorter than one "
                         f"{seconds:.2f} s segment")
    n_segments = int(math.ceil(clip.n_samples / seg_samples))
    n_frames = int(round(seconds / frame_seconds))
    out = []
    for i in range(n_segments):
        start, stop = i * seg_samples, (i + 1) * seg_samples
        chunk = clip.samples[:, start:min(stop, clip.n_samples)]
        if chunk.shape[1] < seg_samples:
            chunk = np.pad(chunk, ((0, 0), (0, seg_samples - chunk.shape[1])))
        t0, t1 = i * seconds, (i + 1) * seconds
        local = []
        for ev in events:
            onset, offset = max(ev.onset, t0), min(ev.offset, t1)
            if offset - onset <= 1e-9:
                continue
            local.append(EventLabel(class_id=ev.class_id, onset=onset - t0,
                                    offset=offset - t0, azimuth=ev.azimuth,
                                    elevation=ev.elevation, distance=ev.distance))
        out.append((FoaClip(chunk, sample_rate=clip.sample_rate),
                    encode_targets(local, n_frames, n_classes, frame_seconds)))
    return out


# ---------------------------------------------------------------------------
# event-list conversions
# ---------------------------------------------------------------------------

def targets_to_event_list(tgt: FrameTargets, frame_offset=0,
                          into: EventList | None = None) -> EventList:
    """Decode reference targets back into per-frame events."""
    out = into if into is not None else EventList()
    n_tracks, n_frames = tgt.active.shape
    for frame in range(n_frames):
        for track in range(n_tracks):
            if not tgt.active[track, frame]:
                continue
            v = tgt.doa[track, frame]
            az = wrap_azimuth(math.degrees(math.atan2(v[1], v[0])))
            el = math.degrees(math.asin(max(-1.0, min(1.0, v[2]))))
            out.add(frame_offset + frame,
                    Event(class_id=int(np.argmax(tgt.sed[track, frame])),
                          azimuth=az, elevation=el,
                          distance=float(tgt.dist[track, frame, 0]), track=track))
    out.n_frames = max(out.n_frames, frame_offset + n_frames)
    return out


def predictions_to_event_list(sed, doa, dist, threshold=0.5, frame_offset=0,
                              into: EventList | None = None) -> EventList:
    """Decode network outputs: per frame and track, emit an event when the
    maximum class probability exceeds the threshold; the class is the argmax,
    the direction is the normalized direction vector."""
    out = into if into is not None else EventList()
    n_tracks, n_frames = sed.shape[0], sed.shape[1]
    for frame in range(n_frames):
        for track in range(n_tracks):
            probs = sed[track, frame]
            if probs.max() <= threshold:
                continue
            v = doa[track, frame]
            norm = float(np.linalg.norm(v))
            if norm > 0:
                v = v / norm
            az = wrap_azimuth(math.degrees(math.atan2(v[1], v[0])))
            el = math.degrees(math.asin(max(-1.0, min(1.0, v[2]))))
            out.add(frame_offset + frame,
                    Event(class_id=int(np.argmax(probs)), azimuth=az, elevation=el,
                          distance=max(float(dist[track, frame, 0]), 0.0), track=track))
    out.n_frames = max(out.n_frames, frame_offset + n_frames)
    return out


def oracle_predictions(tgt: FrameTargets):
    """Perfect prediction arrays for a reference: certain activity on active
    tracks, exact direction and distance."""
    sed = tgt.sed.astype(np.float64)
    return sed, tgt.doa.copy(), tgt.dist.copy()


# ---------------------------------------------------------------------------
# label CSV and dataset files
# ---------------------------------------------------------------------------

_CSV_HEADER = "frame_100ms,class,track,azimuth_deg,elevation_deg,distance_m"


def write_labels(path, events: EventList):
    lines = [_CSV_HEADER]
    for frame in events.active_frames():
        for ev in events.events_at(frame):
            az = wrap_azimuth(round(ev.azimuth, 4))      # keep 180.0000 out of the file
            dist = max(ev.distance, 1e-4)                # stay positive at 4 decimals
            lines.append(f"{frame},{ev.class_id},{ev.track},{az:.4f},"
                         f"{ev.elevation:.4f},{dist:.4f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_labels(path, n_frames=None) -> EventList:
    out = EventList(n_frames=n_frames or 0)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or (lineno == 1 and line == _CSV_HEADER):
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            try:
                frame, cls, track = int(parts[0]), int(parts[1]), int(parts[2])
                az, el, dist = float(parts[3]), float(parts[4]), float(parts[5])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if dist <= 0:
                raise ValueError(f"{path}:{lineno}: reference distance {dist} "
                                 "must be positive")
            try:
                out.add(frame, Event(class_id=cls, azimuth=az, elevation=el,
                                     distance=dist, track=track))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if n_frames is not None:
        out.n_frames = max(out.n_frames, n_frames)
    return out


def save_clip(path, clip: FoaClip):
    save_container(path, {"foa": clip.samples},
                   meta={"sample_rate": clip.sample_rate})


def load_clip(path) -> FoaClip:
    arrays, meta = load_container(path)
    if "foa" not in arrays:
        raise ValueError(f"{path}: no 'foa' array in container")
    return FoaClip(arrays["foa"], sample_rate=int(meta.get("sample_rate", 24000)))


def write_dataset(out_dir, specs, seconds=5.0, n_classes=13):
    """Render scenes, segment them, and store clip/label pairs plus a manifest.

    Returns the manifest path; manifest lines are 'clip_file label_file',
    relative to the manifest directory.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    idx = 0
    for spec in specs:
        clip, events = synth_scene(spec)
        for seg_clip, seg_targets in segment(clip, events, seconds=seconds,
                                             n_classes=n_classes):
            clip_name, label_name = f"seg_{idx:05d}.foa", f"seg_{idx:05d}.csv"
            save_clip(os.path.join(out_dir, clip_name), seg_clip)
            write_labels(os.path.join(out_dir, label_name),
                         targets_to_event_list(seg_targets))
            entries.append(f"{clip_name} {label_name}")
            idx += 1
    manifest = os.path.join(out_dir, "manifest.txt")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(entries) + ("\n" if entries else ""))
    return manifest


def read_manifest(path):
    """List of (clip_path, label_path) tuples, resolved against the manifest dir."""
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'clip label', got {line!r}")
            pairs.append((os.path.join(base, parts[0]), os.path.join(base, parts[1])))
    return pairs
