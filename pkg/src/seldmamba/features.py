"""First-order ambisonics (FOA) front end: STFT, log-mel spectrograms,
active intensity vectors, and per-branch feature assembly.

Channel order is ACN (W, X, Y, Z) with SN3D-style unit gains, i.e. a plane
wave from azimuth phi / elevation theta is encoded with gains
(1, cos phi cos theta, sin phi cos theta, sin theta).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .checkpoint import load_container, save_container


@dataclass
class FeatureConfig:
    sample_rate: int = 24000
    n_fft: int = 1024
    hop: int = 300
    n_mels: int = 128
    fmin: float = 20.0
    fmax: float = 12000.0
    sde_use_ivs: bool = False
    log_floor: float = 1e-10
    iv_eps: float = 1e-8


@dataclass
class FoaClip:
    """4-channel FOA waveform (W, X, Y, Z) with its sample rate."""

    samples: np.ndarray
    sample_rate: int = 24000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != 4:
            raise ValueError(f"FoaClip needs (4, L) samples, got {self.samples.shape}")

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.sample_rate


@dataclass
class BranchFeatures:
    """Per-branch network inputs: (channels, T, F) arrays."""

    sed: np.ndarray
    doa: np.ndarray
    sde: np.ndarray

    def __post_init__(self):
        if self.doa.shape[0] != self.sed.shape[0] + 3:
            raise ValueError(f"DoA branch must carry 3 extra IV channels: "
                             f"sed {self.sed.shape} vs doa {self.doa.shape}")
        if not (self.sed.shape[1:] == self.doa.shape[1:] == self.sde.shape[1:]):
            raise ValueError("branch features disagree on (T, F): "
                             f"{self.sed.shape}, {self.doa.shape}, {self.sde.shape}")

    @property
    def n_frames(self):
        return self.sed.shape[1]

    @property
    def n_bands(self):
        return self.sed.shape[2]


def stft(clip: FoaClip, n_fft=1024, hop=300):
    """Centered one-sided STFT of every channel: (4, T, n_fft//2 + 1) complex.

    Frames are centered at k*hop with reflect padding, so T = floor(L / hop)
    depends only on the hop.  Periodic Hann window.
    """
    if n_fft < 2 or (n_fft & (n_fft - 1)) != 0:
        raise ValueError(f"stft: n_fft {n_fft} must be a power of two")
    if hop < 1:
        raise ValueError(f"stft: hop {hop} must be >= 1")
    x = clip.samples
    if x.shape[1] < n_fft:
        raise ValueError(f"stft: clip of {x.shape[1]} samples is shorter than "
                         f"one {n_fft}-sample window")
    n_frames = x.shape[1] // hop
    half = n_fft // 2
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)
    padded = np.pad(x, ((0, 0), (half, half)), mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft, axis=1)
    frames = frames[:, np.arange(n_frames) * hop, :]            # (4, T, n_fft)
    return np.fft.rfft(frames * window, axis=2)


def hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    freq = np.asarray(freq, dtype=np.float64)
    linear = freq / (200.0 / 3.0)
    log_region = freq >= 1000.0
    safe = np.maximum(freq, 1e-12)
    logmel = 15.0 + np.log(safe / 1000.0) / (np.log(6.4) / 27.0)
    return np.where(log_region, logmel, linear)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    hz = mel * (200.0 / 3.0)
    log_region = mel >= 15.0
    loghz = 1000.0 * np.exp((np.log(6.4) / 27.0) * (mel - 15.0))
    return np.where(log_region, loghz, hz)


def mel_filterbank(sample_rate, n_fft, n_mels, fmin, fmax):
    """Triangular mel filterbank (Slaney band edges, area-normalized):
    (n_mels, n_fft//2 + 1)."""
    if not 0.0 <= fmin < fmax <= sample_rate / 2.0:
        raise ValueError(f"mel_filterbank: need 0 <= fmin < fmax <= Nyquist, "
                         f"got fmin={fmin}, fmax={fmax}, sr={sample_rate}")
    n_bins = n_fft // 2 + 1
    if n_mels > n_bins:
        raise ValueError(f"mel_filterbank: n_mels {n_mels} exceeds {n_bins} spectral bins")
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    weights = np.zeros((n_mels, n_bins))
    band_widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    for m in range(n_mels):
        lower = -ramps[m] / band_widths[m]
        upper = ramps[m + 2] / band_widths[m + 1]
        weights[m] = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:n_mels]))[:, None]
    if np.any(weights.sum(axis=1) == 0.0):
        empty = int(np.flatnonzero(weights.sum(axis=1) == 0.0)[0])
        raise ValueError(f"mel_filterbank: band {empty} covers no spectral bin "
                         "(degenerate filterbank)")
    return weights


def logmel(spec, melbank, log_floor=1e-10):
    """Log mel-power features (C, T, n_mels) from a complex spectrogram."""
    power = (spec.real ** 2 + spec.imag ** 2)
    return np.log(power @ melbank.T + log_floor)


def active_intensity(spec, eps=1e-8):
    """Per-bin normalized acoustic intensity direction (3, T, n_bins).

    I = Re{conj(W) * (X, Y, Z)}, normalized by its Euclidean norm + eps, so
    every entry lies in [-1, 1].
    """
    if spec.shape[0] != 4:
        raise ValueError(f"active_intensity: expected 4 FOA channels, got {spec.shape[0]}")
    iv = (np.conj(spec[0:1]) * spec[1:4]).real
    norm = np.sqrt((iv ** 2).sum(axis=0, keepdims=True))
    return iv / (norm + eps)


def intensity_vectors(spec, melbank, eps=1e-8):
    """Normalized intensity vectors projected onto the mel bands: (3, T, n_mels)."""
    return active_intensity(spec, eps=eps) @ melbank.T


def assemble_branch_inputs(clip: FoaClip, config: FeatureConfig) -> BranchFeatures:
    """Extract the three branch inputs: detection and distance branches get
    4-channel log-mels, the direction branch gets log-mels + IVs (7 channels);
    the distance branch also gets IVs when ``sde_use_ivs`` is set."""
    if clip.sample_rate != config.sample_rate:
        raise ValueError(f"clip sample rate {clip.sample_rate} != configured "
                         f"{config.sample_rate}")
    spec = stft(clip, n_fft=config.n_fft, hop=config.hop)
    melbank = mel_filterbank(config.sample_rate, config.n_fft, config.n_mels,
                             config.fmin, config.fmax)
    mel = logmel(spec, melbank, log_floor=config.log_floor)
    ivs = intensity_vectors(spec, melbank, eps=config.iv_eps)
    doa = np.concatenate([mel, ivs], axis=0)
    sde = doa.copy() if config.sde_use_ivs else mel
    return BranchFeatures(sed=mel, doa=doa, sde=sde)


# ---------------------------------------------------------------------------
# feature cache files
# ---------------------------------------------------------------------------

_CACHE_KEYS = ("sample_rate", "n_fft", "hop", "n_mels", "fmin", "fmax",
               "sde_use_ivs", "log_floor", "iv_eps")


def save_feature_cache(path, feats: BranchFeatures, config: FeatureConfig):
    meta = {key: getattr(config, key) for key in _CACHE_KEYS}
    save_container(path, {"sed": feats.sed, "doa": feats.doa, "sde": feats.sde}, meta=meta)


def load_feature_cache(path, config: FeatureConfig) -> BranchFeatures:
    """Load cached features, rejecting caches extracted under other parameters."""
    arrays, meta = load_container(path)
    for key in _CACHE_KEYS:
        expected = str(getattr(config, key))
        if meta.get(key) != expected:
            raise ValueError(f"feature cache {path}: parameter {key}={meta.get(key)!r} "
                             f"does not match active config {expected!r}")
    missing = [k for k in ("sed", "doa", "sde") if k not in arrays]
    if missing:
        raise ValueError(f"feature cache {path}: missing arrays {missing}")
    return BranchFeatures(sed=arrays["sed"], doa=arrays["doa"], sde=arrays["sde"])


def feature_config_from_kv(pairs) -> FeatureConfig:
    """Build a FeatureConfig from string key/value pairs (config file support)."""
    cfg = FeatureConfig()
    valid = {f.name: f.type for f in fields(FeatureConfig)}
    for key, value in pairs.items():
        if key not in valid:
            raise KeyError(f"unknown feature option {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            setattr(cfg, key, value.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(cfg, key, int(value))
        else:
            setattr(cfg, key, float(value))
    return cfg
