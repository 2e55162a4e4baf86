"""Frame-level permutation-invariant multi-task loss over the three output
tracks, and the two-stage weight schedule.

Per frame and candidate track permutation the combined loss is

    w_sed * BCE(activities) + w_doa * masked MSE(direction)
                            + w_dist * masked L1(distance)

Every frame independently selects its minimizing permutation; gradients flow
only through the selected entries.  Direction and distance terms are masked
to frames where the (permuted) target track is active: regressing targets
for silent tracks is meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

TRACK_PERMUTATIONS = tuple(permutations(range(3)))
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    sed: float
    doa: float
    dist: float

    def __post_init__(self):
        if min(self.sed, self.doa, self.dist) < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


_STAGE_PRESETS = {
    "stage1": LossWeights(25.0, 5.0, 0.0),
    "stage2": LossWeights(25.0, 5.0, 3.0),
    "unified": LossWeights(25.0, 5.0, 1.0),
}


def stage_schedule(stage: str) -> LossWeights:
    """Loss-weight preset for a training stage tag."""
    try:
        return _STAGE_PRESETS[stage]
    except KeyError:
        raise ValueError(f"unknown stage {stage!r}; expected one of "
                         f"{sorted(_STAGE_PRESETS)}") from None


@dataclass
class FrameTargets:
    """Track-wise reference tensors: one-hot class activity, unit Cartesian
    direction (zero when inactive), distance in meters, and the activity mask."""

    sed: np.ndarray     # (n_tracks, T, n_classes) in {0, 1}
    doa: np.ndarray     # (n_tracks, T, 3)
    dist: np.ndarray    # (n_tracks, T, 1)
    active: np.ndarray  # (n_tracks, T) bool

    def __post_init__(self):
        nt, t = self.active.shape
        if self.sed.shape[:2] != (nt, t) or self.doa.shape != (nt, t, 3) \
                or self.dist.shape != (nt, t, 1):
            raise ValueError(f"inconsistent target shapes: sed {self.sed.shape}, "
                             f"doa {self.doa.shape}, dist {self.dist.shape}, "
                             f"active {self.active.shape}")

    def validate(self):
        """Check the one-hot / unit-norm / zero-when-inactive invariants."""
        act = self.active
        row_sums = self.sed.sum(axis=2)
        if not np.array_equal(row_sums[act], np.ones(act.sum())):
            raise ValueError("active frames must carry exactly one class")
        norms = np.linalg.norm(self.doa, axis=2)
        if act.any() and np.any(np.abs(norms[act] - 1.0) > 1e-4):
            raise ValueError("active direction targets must be unit vectors")
        inactive = ~act
        if np.any(self.sed[inactive] != 0) or np.any(norms[inactive] != 0) \
                or np.any(self.dist[inactive] != 0):
            raise ValueError("inactive track frames must be all-zero")
        return self

    @property
    def n_frames(self):
        return self.active.shape[1]


def permute_tracks(tgt: FrameTargets, perm) -> FrameTargets:
    perm = list(perm)
    return FrameTargets(sed=tgt.sed[perm], doa=tgt.doa[perm],
                        dist=tgt.dist[perm], active=tgt.active[perm])


def _check_perm(perm):
    if sorted(perm) != [0, 1, 2]:
        raise ValueError(f"invalid track permutation {perm!r}")
    return tuple(perm)


def _bce_cells(pred_sed, tgt_sed, dtype):
    p = ad.clip(pred_sed, BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = Tensor(np.asarray(tgt_sed, dtype=dtype))
    one_minus_t = Tensor(np.asarray(1.0 - tgt_sed, dtype=dtype))
    return ad.neg(ad.add(ad.mul(t, ad.log(p)),
                         ad.mul(one_minus_t,
                                ad.log(ad.sub(Tensor(np.asarray(1.0, dtype=dtype)), p)))))


def component_losses(pred, tgt: FrameTargets, perm):
    """(L_sed, L_doa, L_dist) for one fixed track assignment.

    L_sed averages binary cross entropy over every track/frame/class cell;
    L_doa and L_dist average over the active (permuted) target cells only and
    are zero when nothing is active.
    """
    perm = _check_perm(perm)
    tp = permute_tracks(tgt, perm)
    dtype = pred.sed.dtype

    l_sed = ad.tmean(_bce_cells(pred.sed, tp.sed, dtype))

    mask3 = np.repeat(tp.active[:, :, None], 3, axis=2).astype(dtype)
    n_doa = mask3.sum()
    if n_doa > 0:
        diff = ad.sub(pred.doa, Tensor(np.asarray(tp.doa, dtype=dtype)))
        sq = ad.mul(ad.mul(diff, diff), Tensor(mask3))
        l_doa = ad.div(ad.tsum(sq), Tensor(np.asarray(n_doa, dtype=dtype)))
    else:
        l_doa = Tensor(np.asarray(0.0, dtype=dtype))

    mask1 = tp.active[:, :, None].astype(dtype)
    n_dist = mask1.sum()
    if n_dist > 0:
        adiff = ad.absolute(ad.sub(pred.dist, Tensor(np.asarray(tp.dist, dtype=dtype))))
        l_dist = ad.div(ad.tsum(ad.mul(adiff, Tensor(mask1))),
                        Tensor(np.asarray(n_dist, dtype=dtype)))
    else:
        l_dist = Tensor(np.asarray(0.0, dtype=dtype))
    return l_sed, l_doa, l_dist


def pit_loss(pred, tgt: FrameTargets, weights: LossWeights):
    """Permutation-invariant loss with per-frame assignment selection.

    Returns (loss, best_perm) where best_perm[t] indexes
    ``TRACK_PERMUTATIONS`` for frame t.  Gradients flow only through each
    frame's selected permutation.
    """
    dtype = pred.sed.dtype
    n_frames = tgt.n_frames
    if pred.sed.shape[1] != n_frames:
        raise ValueError(f"prediction has {pred.sed.shape[1]} frames, "
                         f"targets have {n_frames}")

    per_perm = []
    for perm in TRACK_PERMUTATIONS:
        tp = permute_tracks(tgt, perm)
        bce_f = ad.tmean(_bce_cells(pred.sed, tp.sed, dtype), axis=(0, 2))   # (T,)

        mask3 = np.repeat(tp.active[:, :, None], 3, axis=2).astype(dtype)
        counts3 = np.maximum(mask3.sum(axis=(0, 2)), 1.0)                    # (T,)
        diff = ad.sub(pred.doa, Tensor(np.asarray(tp.doa, dtype=dtype)))
        sq = ad.mul(ad.mul(diff, diff), Tensor(mask3))
        doa_f = ad.div(ad.tsum(sq, axis=(0, 2)), Tensor(counts3.astype(dtype)))

        mask1 = tp.active[:, :, None].astype(dtype)
        counts1 = np.maximum(mask1.sum(axis=(0, 2)), 1.0)
        adiff = ad.absolute(ad.sub(pred.dist, Tensor(np.asarray(tp.dist, dtype=dtype))))
        dist_f = ad.div(ad.tsum(ad.mul(adiff, Tensor(mask1)), axis=(0, 2)),
                        Tensor(counts1.astype(dtype)))

        combined = ad.add(
            ad.add(ad.mul(Tensor(np.asarray(weights.sed, dtype=dtype)), bce_f),
                   ad.mul(Tensor(np.asarray(weights.doa, dtype=dtype)), doa_f)),
            ad.mul(Tensor(np.asarray(weights.dist, dtype=dtype)), dist_f))
        per_perm.append(combined)

    stacked = ad.stack(per_perm)                         # (6, T)
    best = np.argmin(stacked.data, axis=0)               # (T,)
    select = np.zeros(stacked.shape, dtype=dtype)
    select[best, np.arange(n_frames)] = 1.0
    loss = ad.tmean(ad.tsum(ad.mul(stacked, Tensor(select)), axis=0))
    return loss, best
