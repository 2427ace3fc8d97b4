"""NEF: a neutral binary container for feedforward encoder weights.

The container is framework-free so the fuzzer can treat encoders as black
boxes.  Layout on disk (bit-exact):

    magic "NEF1" | header_length: u32 little-endian | UTF-8 JSON header |
    concatenated 32-bit little-endian IEEE-754 tensors, row-major, in
    header order.

The JSON header lists the layers (kind plus static shape metadata), the
model input shape, the output layout needed to decode raw outputs into
per-electrode pulse parameters, and the tensor table.  Serialization is
deterministic (sorted keys, no whitespace) so identical graphs produce
identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

MAGIC = b"NEF1"

ACTIVATIONS = ("relu", "sigmoid", "tanh")
LAYER_KINDS = ("dense", "conv2d", "activation", "scale_clamp")


class NEFError(ValueError):
    """Malformed container or inconsistent model description."""


@dataclass(frozen=True)
class EncoderOutputLayout:
    """How a raw output vector maps onto per-electrode pulse parameters.

    ``params_per_electrode`` is 3 for (frequency, pulse duration, amplitude)
    models, laid out block-wise as all frequencies, then all pulse
    durations, then all amplitudes ("fpa").  Amplitude-only models use 1
    parameter per electrode ("a") and carry the fixed frequency (Hz) and
    pulse duration (ms) shared by every electrode.
    """

    electrode_count: int
    params_per_electrode: int
    ordering: str = "fpa"
    fixed_frequency_hz: float | None = None
    fixed_pulse_ms: float | None = None

    def __post_init__(self):
        if self.electrode_count < 1:
            raise NEFError("layout: electrode_count must be positive")
        if self.params_per_electrode not in (1, 3):
            raise NEFError("layout: params_per_electrode must be 1 or 3")
        expected = "a" if self.params_per_electrode == 1 else "fpa"
        if self.ordering != expected:
            raise NEFError(f"layout: ordering must be {expected!r} for "
                           f"params_per_electrode={self.params_per_electrode}")
        has_fixed = self.fixed_frequency_hz is not None and self.fixed_pulse_ms is not None
        if self.params_per_electrode == 1 and not has_fixed:
            raise NEFError("layout: amplitude-only layouts need fixed_frequency_hz "
                           "and fixed_pulse_ms")
        if self.params_per_electrode == 3 and (
                self.fixed_frequency_hz is not None or self.fixed_pulse_ms is not None):
            raise NEFError("layout: fixed frequency/pulse only valid for "
                           "amplitude-only layouts")

    @property
    def raw_length(self) -> int:
        return self.electrode_count * self.params_per_electrode

    def to_json(self) -> dict:
        return {
            "electrode_count": self.electrode_count,
            "params_per_electrode": self.params_per_electrode,
            "ordering": self.ordering,
            "fixed_frequency_hz": self.fixed_frequency_hz,
            "fixed_pulse_ms": self.fixed_pulse_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EncoderOutputLayout":
        try:
            return cls(
                electrode_count=int(obj["electrode_count"]),
                params_per_electrode=int(obj["params_per_electrode"]),
                ordering=str(obj.get("ordering", "fpa")),
                fixed_frequency_hz=obj.get("fixed_frequency_hz"),
                fixed_pulse_ms=obj.get("fixed_pulse_ms"),
            )
        except KeyError as exc:
            raise NEFError(f"layout: missing field {exc}") from exc


@dataclass
class LayerSpec:
    """One layer of the graph: a kind plus kind-specific config/tensors."""

    kind: str
    config: dict[str, Any] = field(default_factory=dict)
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    # float64 copies used for accumulation during inference (set on load)
    weight64: np.ndarray | None = None
    bias64: np.ndarray | None = None

    def finalize(self):
        if self.weight is not None:
            self.weight = np.ascontiguousarray(self.weight, dtype=np.float32)
            self.weight64 = self.weight.astype(np.float64)
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
            self.bias64 = self.bias.astype(np.float64)


@dataclass
class ModelGraph:
    """A validated, immutable-by-convention feedforward encoder.

    ``layer_shapes[i]`` is the output shape of layer ``i``: ``(C, H, W)``
    after spatial layers, ``(n,)`` after dense layers.  Dense layers flatten
    their input row-major (channel-major for conv outputs).
    """

    layers: list[LayerSpec]
    input_shape: tuple[int, int]
    layout: EncoderOutputLayout
    metadata: dict = field(default_factory=dict)
    layer_shapes: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def output_size(self) -> int:
        return int(np.prod(self.layer_shapes[-1]))

    @property
    def neuron_count(self) -> int:
        """Total traced units: the flattened size of every layer output."""
        return sum(int(np.prod(s)) for s in self.layer_shapes)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple(int(np.prod(s)) for s in self.layer_shapes)


def _flat(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape))


def _propagate_shape(idx: int, layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Validate layer idx against its input shape and return its output shape."""
    kind = layer.kind
    if kind == "dense":
        in_size = int(layer.config["in_size"])
        out_size = int(layer.config["out_size"])
        if in_size < 1 or out_size < 1:
            raise NEFError(f"layer {idx} (dense): sizes must be positive")
        if _flat(shape) != in_size:
            raise NEFError(f"layer {idx} (dense): expects input size {in_size}, "
                           f"previous layer produces {_flat(shape)}")
        if layer.weight is None or layer.weight.shape != (out_size, in_size):
            raise NEFError(f"layer {idx} (dense): weight shape must be "
                           f"({out_size}, {in_size})")
        if layer.bias is None or layer.bias.shape != (out_size,):
            raise NEFError(f"layer {idx} (dense): bias shape must be ({out_size},)")
        return (out_size,)
    if kind == "conv2d":
        if len(shape) != 3:
            raise NEFError(f"layer {idx} (conv2d): needs a (channels, H, W) input, "
                           f"got a flat vector")
        in_c = int(layer.config["in_channels"])
        out_c = int(layer.config["out_channels"])
        kh, kw = (int(v) for v in layer.config["kernel_hw"])
        pad = int(layer.config.get("padding", 0))
        if pad < 0 or kh < 1 or kw < 1 or in_c < 1 or out_c < 1:
            raise NEFError(f"layer {idx} (conv2d): invalid geometry")
        c, h, w = shape
        if c != in_c:
            raise NEFError(f"layer {idx} (conv2d): expects {in_c} input channels, "
                           f"previous layer produces {c}")
        oh, ow = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
        if oh < 1 or ow < 1:
            raise NEFError(f"layer {idx} (conv2d): kernel {kh}x{kw} larger than "
                           f"padded input {h + 2 * pad}x{w + 2 * pad}")
        if layer.weight is None or layer.weight.shape != (out_c, in_c, kh, kw):
            raise NEFError(f"layer {idx} (conv2d): weight shape must be "
                           f"({out_c}, {in_c}, {kh}, {kw})")
        if layer.bias is None or layer.bias.shape != (out_c,):
            raise NEFError(f"layer {idx} (conv2d): bias shape must be ({out_c},)")
        return (out_c, oh, ow)
    if kind == "activation":
        fn = layer.config.get("fn")
        if fn not in ACTIVATIONS:
            raise NEFError(f"layer {idx} (activation): unknown fn {fn!r}")
        return shape
    if kind == "scale_clamp":
        lo, hi = float(layer.config["lo"]), float(layer.config["hi"])
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise NEFError(f"layer {idx} (scale_clamp): requires finite lo <= hi")
        return shape
    raise NEFError(f"layer {idx}: unknown layer kind {kind!r}")


def validate_graph(layers: list[LayerSpec], input_shape: tuple[int, int],
                   layout: EncoderOutputLayout) -> list[tuple[int, ...]]:
    """Check shape compatibility layer by layer; return per-layer output shapes."""
    if not layers:
        raise NEFError("model must have at least one layer")
    h, w = int(input_shape[0]), int(input_shape[1])
    if h < 1 or w < 1:
        raise NEFError("input shape must be positive")
    shape: tuple[int, ...] = (1, h, w)
    shapes = []
    for idx, layer in enumerate(layers):
        shape = _propagate_shape(idx, layer, shape)
        shapes.append(shape)
    if _flat(shape) != layout.raw_length:
        raise NEFError(f"final layer produces {_flat(shape)} values but the layout "
                       f"expects {layout.raw_length}")
    return shapes


# --- serialization ---------------------------------------------------------

_STATIC_KEYS = {
    "dense": ("in_size", "out_size"),
    "conv2d": ("in_channels", "out_channels", "kernel_hw", "padding"),
    "activation": ("fn",),
    "scale_clamp": ("lo", "hi"),
}


def _layer_header(layer: LayerSpec) -> dict:
    entry: dict[str, Any] = {"kind": layer.kind}
    for key in _STATIC_KEYS.get(layer.kind, ()):
        if key in layer.config:
            entry[key] = layer.config[key]
    return entry


def save_model(model: ModelGraph) -> bytes:
    """Serialize a graph to NEF bytes.  Deterministic for identical graphs."""
    tensors: list[np.ndarray] = []
    table = []
    for idx, layer in enumerate(model.layers):
        for role in ("weight", "bias"):
            arr = getattr(layer, role)
            if arr is not None:
                arr32 = np.ascontiguousarray(arr, dtype=np.float32)
                tensors.append(arr32)
                table.append({"layer": idx, "role": role, "shape": list(arr32.shape)})
    header = {
        "input_shape": [int(model.input_shape[0]), int(model.input_shape[1])],
        "layers": [_layer_header(layer) for layer in model.layers],
        "layout": model.layout.to_json(),
        "metadata": model.metadata,
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(t.astype("<f4").tobytes(order="C") for t in tensors)
    return MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + blob


def load_model(container: bytes) -> ModelGraph:
    """Parse and validate NEF bytes.  Deterministic and idempotent."""
    if len(container) < 8 or container[:4] != MAGIC:
        raise NEFError("bad magic: not a NEF container")
    (header_len,) = struct.unpack_from("<I", container, 4)
    if 8 + header_len > len(container):
        raise NEFError("header length exceeds container size")
    try:
        header = json.loads(container[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise NEFError(f"malformed JSON header: {exc}") from exc

    for key in ("input_shape", "layers", "layout", "tensors"):
        if key not in header:
            raise NEFError(f"header missing {key!r}")
    input_shape = tuple(int(v) for v in header["input_shape"])
    if len(input_shape) != 2:
        raise NEFError("input_shape must be (height, width)")
    layout = EncoderOutputLayout.from_json(header["layout"])

    layers = []
    for idx, entry in enumerate(header["layers"]):
        kind = entry.get("kind")
        if kind not in LAYER_KINDS:
            raise NEFError(f"layer {idx}: unknown layer kind {kind!r}")
        config = {k: v for k, v in entry.items() if k != "kind"}
        layers.append(LayerSpec(kind=kind, config=config))

    blob = container[8 + header_len:]
    offset = 0
    total = sum(int(np.prod(t["shape"])) for t in header["tensors"])
    if total * 4 != len(blob):
        raise NEFError(f"tensor blob length mismatch: header declares {total * 4} "
                       f"bytes, container holds {len(blob)}")
    for entry in header["tensors"]:
        idx = int(entry["layer"])
        role = entry["role"]
        shape = tuple(int(v) for v in entry["shape"])
        if idx < 0 or idx >= len(layers) or role not in ("weight", "bias"):
            raise NEFError(f"tensor table references invalid slot layer={idx} role={role}")
        count = _flat(shape)
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        setattr(layers[idx], role, np.array(arr, dtype=np.float32))
        offset += count * 4

    shapes = validate_graph(layers, input_shape, layout)
    for layer in layers:
        layer.finalize()
    return ModelGraph(layers=layers, input_shape=(input_shape[0], input_shape[1]),
                      layout=layout, metadata=header.get("metadata", {}) or {},
                      layer_shapes=shapes)


def build_model(layers: list[LayerSpec], input_shape: tuple[int, int],
                layout: EncoderOutputLayout, metadata: dict | None = None) -> ModelGraph:
    """Assemble and validate a graph in memory (used by fixture builders)."""
    shapes = validate_graph(layers, input_shape, layout)
    for layer in layers:
        layer.finalize()
    return ModelGraph(layers=layers, input_shape=input_shape, layout=layout,
                      metadata=metadata or {}, layer_shapes=shapes)
