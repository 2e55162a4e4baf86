"""Three-branch SELD network: cross-stitched convolutional encoders, three
parallel bidirectional state-space blocks per branch (one per output track),
and track-wise fully connected heads.

Branch inputs are (C, T, F) features; four dual-conv stages with
time-frequency pooling (frequency-only in the last stage) reduce them to
(D, T/8, F/16), which is frequency-averaged into a (T/8, D) embedding per
branch.  Heads map each track's block output to class activities (sigmoid),
Cartesian direction (tanh), and distance in meters (ReLU).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .features import BranchFeatures, FeatureConfig
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .ssm import BMambaBlock, SsmConfig


@dataclass
class ModelConfig:
    n_classes: int = 13
    n_tracks: int = 3
    conv_channels: tuple = (64, 128, 256, 512)
    embed_dim: int = 512
    state_dim: int = 16
    conv_kernel: int = 4
    dt_rank: int | None = None
    sde_use_ivs: bool = False
    zoh_b: bool = False
    scan_chunk: int | None = None
    dtype: str = "float64"

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if self.n_tracks != 3:
            raise ValueError("the track-wise output format is fixed at 3 tracks")
        if len(self.conv_channels) != 4:
            raise ValueError(f"need 4 encoder stages, got {self.conv_channels}")
        if self.conv_channels[-1] != self.embed_dim:
            raise ValueError(f"last conv channel count {self.conv_channels[-1]} "
                             f"must equal embed_dim {self.embed_dim}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def ssm_config(self):
        return SsmConfig(state_dim=self.state_dim, conv_kernel=self.conv_kernel,
                         dt_rank=self.dt_rank, zoh_b=self.zoh_b,
                         scan_chunk=self.scan_chunk)


@dataclass
class TrackOutput:
    """Per-track predictions: activity probabilities in [0, 1], Cartesian
    direction in [-1, 1]^3, and nonnegative distance in meters."""

    sed: Tensor   # (n_tracks, T', n_classes)
    doa: Tensor   # (n_tracks, T', 3)
    dist: Tensor  # (n_tracks, T', 1)

    def numpy(self):
        return self.sed.data, self.doa.data, self.dist.data


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

class DualConvStage(Module):
    """Two (3x3 conv -> batch norm -> ReLU) units followed by average pooling."""

    def __init__(self, in_channels, out_channels, pool, rng, dtype=np.float64):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_channels, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_channels, dtype=dtype)
        self._pool = pool

    def __call__(self, x):
        x = ad.relu(self.bn1(self.conv1(x)))
        x = ad.relu(self.bn2(self.conv2(x)))
        return ad.avg_pool2d(x, self._pool)


class CrossStitch(Module):
    """Learnable soft connection mixing same-shaped branch activations:
    stacked outputs = alpha @ stacked inputs at every element position."""

    def __init__(self, n_branches=3, diag=0.9, off_diag=0.05, dtype=np.float64):
        super().__init__()
        init = np.full((n_branches, n_branches), off_diag, dtype=dtype)
        np.fill_diagonal(init, diag)
        self.alpha = Tensor(init, requires_grad=True)

    def __call__(self, xs):
        stacked = ad.stack(xs)
        mixed = ad.mix_branches(self.alpha, stacked)
        return [ad.reshape(ad.narrow(mixed, 0, i, 1), xs[i].shape)
                for i in range(len(xs))]


def cross_stitch(x_sed, x_doa, x_sde, alpha):
    """Functional soft connection over three same-shaped tensors."""
    stacked = ad.stack([x_sed, x_doa, x_sde])
    mixed = ad.mix_branches(alpha, stacked)
    return tuple(ad.reshape(ad.narrow(mixed, 0, i, 1), x_sed.shape) for i in range(3))


class BranchEncoder(Module):
    def __init__(self, in_channels, conv_channels, rng, dtype=np.float64):
        super().__init__()
        c1, c2, c3, c4 = conv_channels
        self.stage1 = DualConvStage(in_channels, c1, (2, 2), rng, dtype=dtype)
        self.stage2 = DualConvStage(c1, c2, (2, 2), rng, dtype=dtype)
        self.stage3 = DualConvStage(c2, c3, (2, 2), rng, dtype=dtype)
        self.stage4 = DualConvStage(c3, c4, (1, 2), rng, dtype=dtype)

    def stages(self):
        return (self.stage1, self.stage2, self.stage3, self.stage4)


class Encoder(Module):
    """Three branch encoders exchanging information through a cross-stitch
    after every stage; emits one (T/8, D) embedding per branch."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float64):
        super().__init__()
        sde_channels = 7 if cfg.sde_use_ivs else 4
        self.sed = BranchEncoder(4, cfg.conv_channels, rng, dtype=dtype)
        self.doa = BranchEncoder(7, cfg.conv_channels, rng, dtype=dtype)
        self.sde = BranchEncoder(sde_channels, cfg.conv_channels, rng, dtype=dtype)
        self.stitches = [CrossStitch(dtype=dtype) for _ in range(4)]
        self._dtype = dtype

    def __call__(self, feats: BranchFeatures):
        xs = [Tensor(np.ascontiguousarray(feats.sed, dtype=self._dtype)),
              Tensor(np.ascontiguousarray(feats.doa, dtype=self._dtype)),
              Tensor(np.ascontiguousarray(feats.sde, dtype=self._dtype))]
        branches = (self.sed, self.doa, self.sde)
        for i in range(4):
            xs = [branch.stages()[i](x) for branch, x in zip(branches, xs)]
            xs = self.stitches[i](xs)
        # (D, T', F') -> frequency average -> (T', D)
        return tuple(ad.transpose(ad.tmean(x, axis=2)) for x in xs)


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------

class DecoderBranch(Module):
    """Per-track blocks and heads for one task branch (no weight sharing
    across tracks)."""

    def __init__(self, cfg: ModelConfig, head_dim, rng, dtype=np.float64):
        super().__init__()
        ssm_cfg = cfg.ssm_config()
        self.blocks = [BMambaBlock(cfg.embed_dim, ssm_cfg, rng, dtype=dtype)
                       for _ in range(cfg.n_tracks)]
        self.heads = [Linear(cfg.embed_dim, head_dim, rng, dtype=dtype)
                      for _ in range(cfg.n_tracks)]

    def __call__(self, embedding, activation):
        outs = []
        for block, head in zip(self.blocks, self.heads):
            outs.append(activation(head(block(embedding))))
        return ad.stack(outs)                      # (n_tracks, T', head_dim)


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float64):
        super().__init__()
        self.sed = DecoderBranch(cfg, cfg.n_classes, rng, dtype=dtype)
        self.doa = DecoderBranch(cfg, 3, rng, dtype=dtype)
        self.dist = DecoderBranch(cfg, 1, rng, dtype=dtype)

    def __call__(self, e_sed, e_doa, e_sde):
        return TrackOutput(sed=self.sed(e_sed, ad.sigmoid),
                           doa=self.doa(e_doa, ad.tanh),
                           dist=self.dist(e_sde, ad.relu))


class SeldModel(Module):
    """Full network: branch features in, track-wise predictions out."""

    def __init__(self, cfg: ModelConfig, rng, dtype=None):
        super().__init__()
        dtype = dtype if dtype is not None else cfg.np_dtype
        self.encoder = Encoder(cfg, rng, dtype=dtype)
        self.decoder = Decoder(cfg, rng, dtype=dtype)
        self.cfg = cfg

    def __call__(self, feats: BranchFeatures) -> TrackOutput:
        expected_sde = 7 if self.cfg.sde_use_ivs else 4
        if feats.sde.shape[0] != expected_sde:
            raise ShapeError(f"distance branch expects {expected_sde} channels, "
                             f"got {feats.sde.shape[0]}")
        e_sed, e_doa, e_sde = self.encoder(feats)
        return self.decoder(e_sed, e_doa, e_sde)


def build_model(cfg: ModelConfig, seed=0) -> SeldModel:
    """Deterministically initialized model: a fixed seed gives bit-identical
    parameters."""
    return SeldModel(cfg, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# parameter and MAC accounting
# ---------------------------------------------------------------------------

def count_params_macs(cfg: ModelConfig, seconds=1.0, feature_config=None):
    """Analytic learnable-parameter and multiply-accumulate counts.

    Parameter counting covers every learnable scalar (conv and linear weights
    and biases, batch-norm affines, cross-stitch matrices, state matrices,
    RMS gains); running statistics are not learnable and are excluded.

    MAC counting rules, for ``seconds`` of audio at the configured hop:
      * conv2d: C_in * C_out * 9 * T * F at the stage's input resolution;
      * cross-stitch: 9 * C * T * F at the stage's output resolution;
      * linear: L * D_in * D_out;
      * depthwise conv: L * E * K;
      * state-space transform: 5 * L * E * N (decay, input discretization,
        state decay multiply, drive formation, readout);
      * elementwise activations, gates, norms and pooling are excluded.
    """
    fc = feature_config if feature_config is not None else FeatureConfig()
    t_frames = int(seconds * fc.sample_rate) // fc.hop
    f_bands = fc.n_mels
    d = cfg.embed_dim
    e = 2 * d
    n = cfg.state_dim
    k = cfg.conv_kernel
    rank = cfg.dt_rank if cfg.dt_rank is not None else max(1, e // 32)
    chans = cfg.conv_channels
    length = t_frames // 8

    def stage_params(cin, cout):
        return 9 * cin * cout + 2 * cout + 9 * cout * cout + 2 * cout

    def branch_params(cin):
        total = 0
        prev = cin
        for c in chans:
            total += stage_params(prev, c)
            prev = c
        return total

    sde_in = 7 if cfg.sde_use_ivs else 4
    params = branch_params(4) + branch_params(7) + branch_params(sde_in)
    params += 4 * 9                                        # cross-stitch matrices

    mamba_layer_params = (
        d * e + e                  # input projection
        + d * e + e                # gate projection
        + e * k + e                # depthwise conv
        + e * rank                 # step-size bottleneck
        + rank * e + e             # step-size expansion
        + e * n + e * n            # input and readout projections
        + e * n                    # state matrix
        + e * d + d)               # output projection
    block_params = 4 * mamba_layer_params + 2 * d          # + two RMS gains
    params += 3 * cfg.n_tracks * block_params
    heads = cfg.n_tracks * ((d * cfg.n_classes + cfg.n_classes)
                            + (d * 3 + 3) + (d * 1 + 1))
    params += heads

    # encoder MACs: stage i convolves at its input resolution, stitch mixes after pooling
    macs = 0
    for branch_in in (4, 7, sde_in):
        t_res, f_res = t_frames, f_bands
        prev = branch_in
        for i, c in enumerate(chans):
            macs += 9 * prev * c * t_res * f_res + 9 * c * c * t_res * f_res
            t_res, f_res = (t_res // 2, f_res // 2) if i < 3 else (t_res, f_res // 2)
            prev = c
    t_res, f_res = t_frames, f_bands
    for i, c in enumerate(chans):
        t_res, f_res = (t_res // 2, f_res // 2) if i < 3 else (t_res, f_res // 2)
        macs += 9 * c * t_res * f_res

    mamba_layer_macs = (
        length * d * e * 2         # input + gate projections
        + length * e * k           # depthwise conv
        + length * e * rank * 2    # step-size projection
        + length * e * n * 2       # input and readout projections
        + 5 * length * e * n       # state-space transform
        + length * e * d)          # output projection
    macs += 3 * cfg.n_tracks * 4 * mamba_layer_macs
    macs += cfg.n_tracks * length * d * (cfg.n_classes + 3 + 1)
    return params, macs


def checkpoint_manifest(model: SeldModel):
    """Name -> shape listing of everything the checkpoint stores."""
    return {name: tuple(arr.shape) for name, arr in model.state_dict().items()}
