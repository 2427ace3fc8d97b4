"""Synthetic encoder fixtures with planted, analytically known violations.

The "retinal-tiny" encoder maps a 16x16 grayscale image to 225 electrode
triples.  Amplitudes are affine in mean brightness above per-electrode
thresholds (relu-gated), so the brightness levels at which the charge,
total-current and active-electrode limits are crossed follow in closed
form and are recorded in the model metadata.  Frequencies are affine in a
contrast proxy (mean absolute horizontal gradient), which plants the
pulse-feasibility violation in high-contrast inputs.  A clamp-regularized
twin appends an output clamp that makes per-electrode charge violations
unreachable while leaving the other failure modes intact.

"cortical-tiny" is an amplitude-only 60-electrode variant, and
"feature-tiny" is a small conv+dense net usable as a feature extractor.
All builders are deterministic given their seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mutation import apply_transform
from .nef import EncoderOutputLayout, LayerSpec, ModelGraph, build_model, save_model


@dataclass(frozen=True)
class RetinalPlanting:
    """Coefficients for the planted retinal encoder."""

    input_hw: tuple[int, int] = (16, 16)
    grid: int = 15                      # electrodes per side
    freq_base_hz: float = 250.0
    freq_gain_hz: float = 1800.0        # Hz per unit mean |gradient|
    freq_jitter: float = 0.1            # per-electrode +-fraction on the gain
    pulse_ms: float = 0.45
    hot_electrodes: int = 3             # high-gain electrodes that cross the charge limit
    hot_gain: float = 45.0
    hot_threshold: float = 0.55
    cold_gain_lo: float = 0.5
    cold_gain_hi: float = 1.5
    theta_lo: float = 0.30              # brightness activation thresholds (cold)
    theta_hi: float = 1.425
    ic_cross_brightness: float = 0.84   # calibrate total current to hit its limit here
    current_limit_ua: float = 6000.0
    charge_limit_nc: float = 628.0
    active_limit: int = 100


def _electrode_profile(planting: RetinalPlanting, rng: np.random.Generator):
    n = planting.grid ** 2
    gains = rng.uniform(planting.cold_gain_lo, planting.cold_gain_hi, size=n)
    thetas = rng.permutation(np.linspace(planting.theta_lo, planting.theta_hi, n))
    hot = rng.choice(n, size=planting.hot_electrodes, replace=False)
    gains[hot] = planting.hot_gain
    thetas[hot] = planting.hot_threshold
    jitter = rng.uniform(-1.0, 1.0, size=n)
    return gains, thetas, jitter, np.sort(hot)


def build_retinal_tiny(seed: int = 1, clamp_hi: float | None = None) -> ModelGraph:
    """Conv + dense encoder, 225 electrodes x (f, p, a)."""
    p = RetinalPlanting()
    h, w = p.input_hw
    n = p.grid ** 2
    rng = np.random.default_rng(seed)
    gains, thetas, jitter, hot = _electrode_profile(p, rng)

    # calibrate the amplitude scale so total current crosses its limit at the
    # planted brightness
    slope_sum = float((gains * np.maximum(0.0, p.ic_cross_brightness - thetas)).sum())
    amp_scale = p.current_limit_ua / slope_sum

    # channel 0/1: positive/negative horizontal gradient; channel 2: pixel pass-through
    conv_w = np.zeros((3, 1, 1, 2), dtype=np.float32)
    conv_w[0, 0, 0] = (1.0, -1.0)
    conv_w[1, 0, 0] = (-1.0, 1.0)
    conv_w[2, 0, 0] = (1.0, 0.0)
    conv = LayerSpec("conv2d", {"in_channels": 1, "out_channels": 3,
                                "kernel_hw": [1, 2], "padding": 0},
                     weight=conv_w, bias=np.zeros(3, dtype=np.float32))

    positions = h * (w - 1)  # per channel after the 1x2 valid conv
    dense_w = np.zeros((3 * n, 3 * positions), dtype=np.float64)
    dense_b = np.zeros(3 * n, dtype=np.float64)
    grad_cols = slice(0, 2 * positions)
    pix_cols = slice(2 * positions, 3 * positions)
    freq_gain = p.freq_gain_hz * (1.0 + p.freq_jitter * jitter)
    dense_w[0:n, grad_cols] = (freq_gain / positions)[:, None]
    dense_b[0:n] = p.freq_base_hz
    dense_b[n:2 * n] = p.pulse_ms
    dense_w[2 * n:, pix_cols] = (amp_scale * gains / positions)[:, None]
    dense_b[2 * n:] = -amp_scale * gains * thetas
    dense = LayerSpec("dense", {"in_size": 3 * positions, "out_size": 3 * n},
                      weight=dense_w.astype(np.float32), bias=dense_b.astype(np.float32))

    layers = [conv, LayerSpec("activation", {"fn": "relu"}), dense,
              LayerSpec("activation", {"fn": "relu"})]
    if clamp_hi is not None:
        layers.append(LayerSpec("scale_clamp", {"lo": 0.0, "hi": float(clamp_hi)}))

    # closed-form crossings (brightness = mean of the pass-through channel)
    charge_cross = p.hot_threshold + p.charge_limit_nc / (
        p.pulse_ms * amp_scale * p.hot_gain)
    active_cross = float(np.sort(thetas)[p.active_limit])  # need count > limit
    pi_cross_grad = ((1000.0 / (2.0 * p.pulse_ms)) - p.freq_base_hz) / float(freq_gain.max())
    metadata = {
        "fixture": "retinal-tiny" + ("-clamped" if clamp_hi is not None else ""),
        "seed": seed,
        "planting": {
            "amp_scale": amp_scale,
            "pulse_ms": p.pulse_ms,
            "hot_electrodes": [int(i) for i in hot],
            "brightness_cross": {"IC": p.ic_cross_brightness, "CD": charge_cross,
                                 "AE": active_cross},
            "gradient_cross": {"PI": pi_cross_grad},
            "clamp_hi": clamp_hi,
        },
    }
    layout = EncoderOutputLayout(electrode_count=n, params_per_electrode=3, ordering="fpa")
    return build_model(layers, (h, w), layout, metadata=metadata)


def build_cortical_tiny(seed: int = 1) -> ModelGraph:
    """Dense amplitude-only encoder, 60 electrodes, fixed frequency/pulse."""
    h, w = 16, 16
    n = 60
    fixed_f, fixed_p = 300.0, 0.17
    current_limit, ic_cross = 3600.0, 0.88
    rng = np.random.default_rng(seed)
    gains = rng.uniform(0.8, 1.2, size=n)
    thetas = rng.permutation(np.linspace(0.5, 1.3, n))
    slope_sum = float((gains * np.maximum(0.0, ic_cross - thetas)).sum())
    amp_scale = current_limit / slope_sum

    pixels = h * w
    dense_w = np.empty((n, pixels), dtype=np.float64)
    dense_w[:] = (amp_scale * gains / pixels)[:, None]
    dense_b = -amp_scale * gains * thetas
    layers = [LayerSpec("dense", {"in_size": pixels, "out_size": n},
                        weight=dense_w.astype(np.float32), bias=dense_b.astype(np.float32)),
              LayerSpec("activation", {"fn": "relu"})]
    charge_cross = float(thetas.min() + (20.4 / fixed_p) / (amp_scale * gains[np.argmin(thetas)]))
    metadata = {"fixture": "cortical-tiny", "seed": seed,
                "planting": {"amp_scale": amp_scale,
                             "brightness_cross": {"IC": ic_cross, "CD": charge_cross,
                                                  "AE": float(np.sort(thetas)[30])}}}
    layout = EncoderOutputLayout(electrode_count=n, params_per_electrode=1, ordering="a",
                                 fixed_frequency_hz=fixed_f, fixed_pulse_ms=fixed_p)
    return build_model(layers, (h, w), layout, metadata=metadata)


def build_feature_tiny(seed: int = 7) -> ModelGraph:
    """Small conv+dense net for use as a feature extractor (layout is a stub)."""
    h, w = 16, 16
    rng = np.random.default_rng(seed)
    conv = LayerSpec("conv2d", {"in_channels": 1, "out_channels": 2,
                                "kernel_hw": [2, 2], "padding": 0},
                     weight=rng.normal(0, 0.5, (2, 1, 2, 2)).astype(np.float32),
                     bias=rng.normal(0, 0.1, 2).astype(np.float32))
    positions = (h - 1) * (w - 1)
    dense = LayerSpec("dense", {"in_size": 2 * positions, "out_size": 32},
                      weight=rng.normal(0, 0.1, (32, 2 * positions)).astype(np.float32),
                      bias=rng.normal(0, 0.05, 32).astype(np.float32))
    layers = [conv, LayerSpec("activation", {"fn": "relu"}), dense]
    layout = EncoderOutputLayout(electrode_count=32, params_per_electrode=1, ordering="a",
                                 fixed_frequency_hz=300.0, fixed_pulse_ms=0.2)
    return build_model(layers, (h, w), layout,
                       metadata={"fixture": "feature-tiny", "seed": seed})


FIXTURES = {
    "retinal-tiny": lambda seed: build_retinal_tiny(seed),
    "retinal-tiny-clamped": lambda seed: build_retinal_tiny(seed, clamp_hi=1300.0),
    "cortical-tiny": lambda seed: build_cortical_tiny(seed),
    "feature-tiny": lambda seed: build_feature_tiny(seed),
}


def fixture_nef(name: str, seed: int = 1) -> bytes:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {sorted(FIXTURES)}")
    return save_model(FIXTURES[name](seed))


def seed_images(shape: tuple[int, int] = (16, 16), include_hot: bool = True):
    """Deterministic seed set: five smooth safe images plus one bright seed
    sitting inside the planted violation region."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)
    images = []
    specs = [(0.35, 1.0, 0.0, 0.00), (0.42, 0.5, 1.0, 0.25), (0.48, 1.5, 0.5, 0.50),
             (0.52, 2.0, 1.0, 0.75), (0.55, 1.0, 2.0, 0.10)]
    for mean, fy, fx, phase in specs:
        pattern = np.sin(2 * np.pi * (fy * yy + fx * xx + phase))
        img = mean + 0.12 * (pattern - pattern.mean())
        images.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    if include_hot:
        pattern = np.sin(2 * np.pi * (yy + xx))
        img = 0.93 + 0.01 * (pattern - pattern.mean())
        images.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    return images


def profile_images(seeds):
    """Deterministic brightness/contrast sweep around a seed set, used as the
    range-profiling dataset."""
    out = []
    for image in seeds:
        for offset in (-0.2, -0.1, 0.0, 0.1, 0.2):
            shifted = apply_transform("brightness", {"offset": offset}, image)
            for factor in (0.7, 1.0, 1.3):
                out.append(apply_transform("contrast", {"factor": factor}, shifted))
    return out
