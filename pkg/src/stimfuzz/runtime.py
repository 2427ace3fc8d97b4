"""Forward evaluation of NEF models and decoding of raw outputs.

Inference matches the serialized precision: elementwise math in float32,
dot-product accumulation in float64 with the result cast back to float32.
Evaluation is a pure function of (model, image) and is safe to call from
multiple workers; each call owns its scratch buffers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .nef import EncoderOutputLayout, LayerSpec, ModelGraph, NEFError


class EvaluationError(RuntimeError):
    """Shape mismatch or non-finite value during a forward pass."""


@dataclass
class StimulationPattern:
    """Per-electrode pulse parameters in canonical units (Hz, ms, uA)."""

    frequency_hz: np.ndarray
    pulse_ms: np.ndarray
    amplitude_ua: np.ndarray

    def __len__(self) -> int:
        return int(self.amplitude_ua.shape[0])


@dataclass
class ActivationTrace:
    """Flattened post-layer values for every layer, in graph order."""

    layers: list[np.ndarray]

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate(self.layers) if len(self.layers) > 1 else self.layers[0]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple(v.shape[0] for v in self.layers)


def _apply_dense(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1).astype(np.float64)
    y = layer.weight64 @ flat + layer.bias64
    return y.astype(np.float32)


def _apply_conv2d(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    pad = int(layer.config.get("padding", 0))
    kh, kw = (int(v) for v in layer.config["kernel_hw"])
    xp = x.astype(np.float64)
    if pad:
        xp = np.pad(xp, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (C, OH, OW, kh, kw)
    y = np.tensordot(layer.weight64, windows, axes=([1, 2, 3], [0, 3, 4]))
    y += layer.bias64[:, None, None]
    return y.astype(np.float32)


def _apply_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    if layer.kind == "dense":
        return _apply_dense(layer, x)
    if layer.kind == "conv2d":
        return _apply_conv2d(layer, x)
    if layer.kind == "activation":
        fn = layer.config["fn"]
        if fn == "relu":
            return np.maximum(x, np.float32(0.0))
        if fn == "sigmoid":
            return (np.float32(1.0) / (np.float32(1.0) + np.exp(-x))).astype(np.float32)
        return np.tanh(x)
    if layer.kind == "scale_clamp":
        return np.clip(x, np.float32(layer.config["lo"]), np.float32(layer.config["hi"]))
    raise NEFError(f"unknown layer kind {layer.kind!r}")


def _run(model: ModelGraph, image: np.ndarray, want_trace: bool):
    if image.shape != model.input_shape:
        raise EvaluationError(f"image shape {image.shape} does not match model input "
                              f"{model.input_shape}")
    x = np.asarray(image, dtype=np.float32).reshape(1, *model.input_shape)
    trace: list[np.ndarray] | None = [] if want_trace else None
    for idx, layer in enumerate(model.layers):
        x = _apply_layer(layer, x)
        if not np.isfinite(x).all():
            raise EvaluationError(f"non-finite value produced by layer {idx} "
                                  f"({layer.kind})")
        if trace is not None:
            trace.append(x.reshape(-1).copy())
    raw = x.reshape(-1)
    return raw, trace


def forward(model: ModelGraph, image: np.ndarray) -> np.ndarray:
    """Evaluate the model on one image; returns the raw float32 output vector."""
    raw, _ = _run(model, image, want_trace=False)
    return raw


def forward_traced(model: ModelGraph, image: np.ndarray) -> tuple[np.ndarray, ActivationTrace]:
    """Like forward() but also captures every layer's flattened output."""
    raw, trace = _run(model, image, want_trace=True)
    return raw, ActivationTrace(layers=trace)


def decode_stimulation(raw: np.ndarray, layout: EncoderOutputLayout) -> StimulationPattern:
    """Split a raw output vector into per-electrode (Hz, ms, uA) triples."""
    raw = np.asarray(raw)
    if raw.ndim != 1 or raw.shape[0] != layout.raw_length:
        raise EvaluationError(f"raw output length {raw.shape} does not match layout "
                              f"({layout.raw_length} values)")
    if not np.isfinite(raw).all():
        raise EvaluationError("raw output contains non-finite values")
    n = layout.electrode_count
    if layout.params_per_electrode == 3:
        freq = raw[:n].astype(np.float32)
        pulse = raw[n:2 * n].astype(np.float32)
        amp = raw[2 * n:].astype(np.float32)
    else:
        freq = np.full(n, layout.fixed_frequency_hz, dtype=np.float32)
        pulse = np.full(n, layout.fixed_pulse_ms, dtype=np.float32)
        amp = raw.astype(np.float32)
    return StimulationPattern(frequency_hz=freq, pulse_ms=pulse, amplitude_ua=amp)
