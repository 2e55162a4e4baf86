"""Training loop (unified or two-stage), evaluation, and the scan benchmark."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor
from .checkpoint import load_container, save_container
from .config import (RunConfig, config_from_snapshot, save_config_snapshot,
                     snapshot_string)
from .data import (SceneSpec, load_clip, predictions_to_event_list, read_labels,
                   read_manifest, segment, synth_scene, targets_to_event_list)
from .features import assemble_branch_inputs
from .metrics import EventList, MetricReport, evaluate_event_lists
from .model import SeldModel, build_model, count_params_macs
from .objective import FrameTargets, LossWeights, pit_loss, stage_schedule
from .optim import AdamW
from .ssm import SelectiveSsm, SsmConfig


@dataclass
class Example:
    feats: object          # BranchFeatures
    targets: FrameTargets
    refs: EventList


def _active_feature_config(cfg: RunConfig):
    # the model config owns the IV-ablation knob
    return replace(cfg.features, sde_use_ivs=cfg.model.sde_use_ivs)


def build_examples(cfg: RunConfig):
    """Materialize the training set: synthetic scenes or a stored manifest."""
    fc = _active_feature_config(cfg)
    n_classes = cfg.model.n_classes
    examples = []
    if cfg.data.manifest:
        for clip_path, label_path in read_manifest(cfg.data.manifest):
            clip = load_clip(clip_path)
            feats = assemble_branch_inputs(clip, fc)
            n_frames = feats.n_frames // 8
            refs = read_labels(label_path, n_frames=n_frames)
            targets = event_list_to_targets(refs, n_frames, n_classes)
            examples.append(Example(feats, targets, refs))
        return examples
    for i in range(cfg.data.n_scenes):
        spec = SceneSpec(seed=cfg.data.seed + i, duration=cfg.data.scene_seconds,
                         n_events=cfg.data.events_per_scene, n_classes=n_classes,
                         snr_db_range=(cfg.data.snr_db_lo, cfg.data.snr_db_hi),
                         sample_rate=fc.sample_rate)
        clip, events = synth_scene(spec)
        for seg_clip, seg_targets in segment(clip, events,
                                             seconds=cfg.data.segment_seconds,
                                             n_classes=n_classes):
            feats = assemble_branch_inputs(seg_clip, fc)
            examples.append(Example(feats, seg_targets,
                                    targets_to_event_list(seg_targets)))
    return examples


def event_list_to_targets(events: EventList, n_frames, n_classes) -> FrameTargets:
    """Track-wise targets from a per-frame event list (track column honored)."""
    from .metrics import unit_vector

    sed = np.zeros((3, n_frames, n_classes))
    doa = np.zeros((3, n_frames, 3))
    dist = np.zeros((3, n_frames, 1))
    active = np.zeros((3, n_frames), dtype=bool)
    for frame in events.active_frames():
        if frame >= n_frames:
            raise ValueError(f"label frame {frame} beyond {n_frames} frames")
        live = sorted(events.events_at(frame), key=lambda e: (e.track, e.class_id))
        if len(live) > 3:
            raise ValueError(f"{len(live)} concurrent labels at frame {frame}")
        for slot, ev in enumerate(live):
            track = ev.track if 0 <= ev.track < 3 else slot
            if active[track, frame]:
                track = slot
            sed[track, frame, ev.class_id] = 1.0
            doa[track, frame] = unit_vector(ev.azimuth, ev.elevation)
            dist[track, frame, 0] = ev.distance
            active[track, frame] = True
    return FrameTargets(sed=sed, doa=doa, dist=dist, active=active)


def _stage_for_epoch(cfg: RunConfig, epoch):
    if cfg.stage.plan == "unified":
        return "unified"
    boundary = cfg.stage.stage1_epochs or cfg.schedule.epochs // 2
    return "stage1" if epoch < boundary else "stage2"


def _lr_for_epoch(cfg: RunConfig, epoch):
    lr = cfg.optimizer.lr
    return lr * 0.5 if epoch >= cfg.schedule.lr_halve_epoch else lr


def train_epoch(model: SeldModel, optimizer: AdamW, examples, weights: LossWeights,
                batch_size, rng):
    """One pass over the examples; returns mean loss and component means."""
    model.train()
    order = rng.permutation(len(examples))
    totals = {"loss": 0.0, "sed": 0.0, "doa": 0.0, "dist": 0.0}
    for start in range(0, len(order), batch_size):
        batch = order[start:start + batch_size]
        optimizer.zero_grad()
        for idx in batch:
            ex = examples[idx]
            pred = model(ex.feats)
            loss, best = pit_loss(pred, ex.targets, weights)
            seed = np.asarray(1.0 / len(batch), dtype=loss.dtype)
            loss.backward(seed)
            totals["loss"] += loss.item()
            comp = _selected_components(pred, ex.targets, best)
            for key in ("sed", "doa", "dist"):
                totals[key] += comp[key]
        optimizer.step()
    n = len(examples)
    return {key: val / n for key, val in totals.items()}


def _selected_components(pred, tgt, best_perm):
    """Numpy-only per-frame component means at the selected permutations."""
    from .objective import TRACK_PERMUTATIONS

    sed_p, doa_p, dist_p = pred.sed.data, pred.doa.data, pred.dist.data
    eps = 1e-7
    p = np.clip(sed_p, eps, 1 - eps)
    comp = {"sed": 0.0, "doa": 0.0, "dist": 0.0}
    n_frames = tgt.n_frames
    for frame in range(n_frames):
        perm = list(TRACK_PERMUTATIONS[best_perm[frame]])
        t_sed = tgt.sed[perm, frame]
        comp["sed"] += float(-(t_sed * np.log(p[:, frame])
                               + (1 - t_sed) * np.log(1 - p[:, frame])).mean())
        act = tgt.active[perm, frame]
        if act.any():
            d = (doa_p[:, frame] - tgt.doa[perm, frame]) * act[:, None]
            comp["doa"] += float((d ** 2).sum() / (3 * act.sum()))
            a = np.abs(dist_p[:, frame] - tgt.dist[perm, frame]) * act[:, None]
            comp["dist"] += float(a.sum() / act.sum())
    return {k: v / n_frames for k, v in comp.items()}


def evaluate_model(model: SeldModel, examples, threshold=0.5, ang_thresh=20.0) -> MetricReport:
    model.eval()
    preds, refs = EventList(), EventList()
    offset = 0
    for ex in examples:
        out = model(ex.feats)
        sed, doa, dist = out.numpy()
        predictions_to_event_list(sed, doa, dist, threshold=threshold,
                                  frame_offset=offset, into=preds)
        targets_to_event_list(ex.targets, frame_offset=offset, into=refs)
        n_frames = ex.targets.n_frames
        offset += n_frames
    preds.n_frames = refs.n_frames = offset
    return evaluate_event_lists(preds, refs, ang_thresh=ang_thresh)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: SeldModel, optimizer: AdamW | None, cfg: RunConfig,
                    epoch):
    arrays = dict(model.state_dict())
    meta = {"epoch": epoch, "config": snapshot_string(cfg)}
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
        meta["optim_step"] = optimizer.step_count
    save_container(path, arrays, meta=meta)


def load_checkpoint(path):
    arrays, meta = load_container(path)
    if "config" not in meta:
        raise ValueError(f"{path}: checkpoint carries no config snapshot")
    cfg = config_from_snapshot(meta["config"])
    return arrays, meta, cfg


def restore_model(path) -> tuple[SeldModel, RunConfig, dict, dict]:
    arrays, meta, cfg = load_checkpoint(path)
    model = build_model(cfg.model, seed=cfg.seed)
    model.load_state_dict({k: v for k, v in arrays.items()
                           if not k.startswith("optim.")})
    return model, cfg, arrays, meta


# ---------------------------------------------------------------------------
# the train command
# ---------------------------------------------------------------------------

def train(cfg: RunConfig, resume_from=None, log=print) -> dict:
    """Run training per the config; returns {'report', 'history', 'checkpoint'}.

    Two-stage plans switch the loss weights at the stage boundary and keep
    training the same parameters (stage 2 continues from the stage-1 state).
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_config_snapshot(os.path.join(cfg.out_dir, "config.cfg"), cfg)
    examples = build_examples(cfg)
    if not examples:
        raise ValueError("no training examples; check the data section")

    model = build_model(cfg.model, seed=cfg.seed)
    optimizer = AdamW(model.named_parameters(), lr=cfg.optimizer.lr,
                      betas=(cfg.optimizer.beta1, cfg.optimizer.beta2),
                      eps=cfg.optimizer.eps, weight_decay=cfg.optimizer.weight_decay)
    start_epoch = 0
    if resume_from is not None:
        arrays, meta, ckpt_cfg = load_checkpoint(resume_from)
        model.load_state_dict({k: v for k, v in arrays.items()
                               if not k.startswith("optim.")})
        optimizer.load_state_arrays(arrays, meta.get("optim_step", 0))
        start_epoch = int(meta["epoch"]) + 1
        log(f"resumed from {resume_from} at epoch {start_epoch}")

    history = []
    stage_reports = {}
    prev_stage = None
    for epoch in range(start_epoch, cfg.schedule.epochs):
        stage = _stage_for_epoch(cfg, epoch)
        weights = stage_schedule(stage)
        if stage != prev_stage:
            log(f"epoch {epoch}: stage={stage} loss weights="
                f"({weights.sed:g}, {weights.doa:g}, {weights.dist:g})")
            prev_stage = stage
        optimizer.lr = _lr_for_epoch(cfg, epoch)
        epoch_rng = np.random.default_rng((cfg.seed + 1) * 100_000 + epoch)
        t0 = time.perf_counter()
        stats = train_epoch(model, optimizer, examples, weights,
                            cfg.schedule.batch_size, epoch_rng)
        entry = {"epoch": epoch, "stage": stage, "lr": optimizer.lr,
                 "weights": [weights.sed, weights.doa, weights.dist],
                 "seconds": round(time.perf_counter() - t0, 3), **stats}
        history.append(entry)
        log(f"epoch {epoch}: loss={stats['loss']:.4f} sed={stats['sed']:.4f} "
            f"doa={stats['doa']:.4f} dist={stats['dist']:.4f} "
            f"({entry['seconds']:.1f}s)")
        save_checkpoint(os.path.join(cfg.out_dir, "last.ckpt"), model, optimizer,
                        cfg, epoch)
        is_stage_end = (cfg.stage.plan == "two-stage"
                        and stage != _stage_for_epoch(cfg, epoch + 1))
        if is_stage_end or epoch == cfg.schedule.epochs - 1:
            tag = stage if cfg.stage.plan == "two-stage" else "final"
            report = evaluate_model(model, examples)
            stage_reports[tag] = report
            log(f"[{tag}] " + report.format_text().replace("\n", " | "))
            save_checkpoint(os.path.join(cfg.out_dir, f"{tag}.ckpt"), model,
                            optimizer, cfg, epoch)

    final_tag = "stage2" if cfg.stage.plan == "two-stage" else "final"
    report = stage_reports.get(final_tag)
    with open(os.path.join(cfg.out_dir, "history.jsonl"), "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry) + "\n")
    with open(os.path.join(cfg.out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump({tag: rep.to_dict() for tag, rep in stage_reports.items()}, fh,
                  indent=2)
    with open(os.path.join(cfg.out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        for tag, rep in stage_reports.items():
            fh.write(f"[{tag}]\n{rep.format_text()}\n\n")
    return {"report": report, "stage_reports": stage_reports, "history": history,
            "checkpoint": os.path.join(cfg.out_dir, f"{final_tag}.ckpt")}


def evaluate_checkpoint(ckpt_path, manifest_path, threshold=0.5) -> MetricReport:
    """Score a stored model against a stored dataset."""
    model, cfg, _, _ = restore_model(ckpt_path)
    fc = _active_feature_config(cfg)
    preds, refs = EventList(), EventList()
    offset = 0
    model.eval()
    for clip_path, label_path in read_manifest(manifest_path):
        clip = load_clip(clip_path)
        feats = assemble_branch_inputs(clip, fc)
        n_frames = feats.n_frames // 8
        ref = read_labels(label_path, n_frames=n_frames)
        out = model(feats)
        sed, doa, dist = out.numpy()
        predictions_to_event_list(sed, doa, dist, threshold=threshold,
                                  frame_offset=offset, into=preds)
        for frame in ref.active_frames():
            for ev in ref.events_at(frame):
                refs.add(offset + frame, ev)
        offset += n_frames
    preds.n_frames = refs.n_frames = offset
    return evaluate_event_lists(preds, refs)


# ---------------------------------------------------------------------------
# scan benchmark
# ---------------------------------------------------------------------------

def bench_scan(lengths=(1024, 2048, 4096, 8192), channels=16, state_dim=16,
               repeats=5, seed=0, chunk=None):
    """Median forward wall time of the selective scan at several sequence
    lengths, plus the fitted log-log growth exponent."""
    rng = np.random.default_rng(seed)
    ssm = SelectiveSsm(channels, SsmConfig(state_dim=state_dim, scan_chunk=chunk),
                       np.random.default_rng(seed), dtype=np.float32)
    rows = []
    for length in lengths:
        x = Tensor(rng.standard_normal((length, channels)).astype(np.float32))
        ssm(x)  # warm up allocation paths
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            ssm(x)
            times.append(time.perf_counter() - t0)
        rows.append({"length": length, "median_s": float(np.median(times)),
                     "min_s": float(np.min(times))})
    logs = np.log([r["length"] for r in rows])
    logt = np.log([r["median_s"] for r in rows])
    exponent = float(np.polyfit(logs, logt, 1)[0])
    return {"rows": rows, "exponent": exponent, "channels": channels,
            "state_dim": state_dim}


def describe_config(cfg: RunConfig, seconds=1.0):
    params, macs = count_params_macs(cfg.model, seconds=seconds,
                                     feature_config=_active_feature_config(cfg))
    lines = [f"params   : {params:,} ({params / 1e6:.2f} M)",
             f"MACs     : {macs:,} per {seconds:g} s of audio "
             f"({macs / 1e9:.2f} G)"]
    model = build_model(cfg.model, seed=cfg.seed)
    actual = sum(p.data.size for p in model.parameters())
    lines.append(f"instantiated parameter scalars: {actual:,}")
    lines.append("modules:")
    for name, arr in model.state_dict().items():
        lines.append(f"  {name}  {tuple(arr.shape)}")
    return "\n".join(lines), params, actual
