"""Coverage signals that steer the fuzzer.

Every metric maintains a CoverageState: a bitset over a fixed item universe
(bins x dimensions, or per-neuron items).  Observing a test marks the items
it reaches and reports how many were new; the admission rule "keep a mutant
iff it strictly increases coverage" is exactly "observe returned > 0".
Item computation is pure, so candidate sets can be computed in parallel and
merged in a defined order, and replaying any record sequence (in any order)
reproduces the same final bitset.

Metric families:

* violation-space bins over constraint proportions (``kmvp``, ``kmvp-v``,
  ``vcc``) and output-value bins over profiled ranges (``kmoc``);
* input-space bins per pixel (``kmic``) and feature-space bins from an
  extractor (``div-approx``);
* white-box neuron metrics over activation traces (``nc``, ``kmnc``,
  ``nbc``, ``snac``, ``tknc``).

The basic strategies carry no coverage signal: the engine pairs them with a
null metric and an admission policy instead.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureExtractor
from .nef import ModelGraph
from .runtime import ActivationTrace, StimulationPattern, forward, forward_traced
from .safety import ViolationReport

STRATEGIES = ("none", "all", "random", "local",
              "nc", "kmnc", "nbc", "snac", "tknc",
              "kmvp", "kmvp-v", "vcc", "kmoc", "kmic", "div-approx")
BASIC_STRATEGIES = ("none", "all", "random", "local")


@dataclass
class MetricParams:
    """Tunable knobs shared by the binned metrics."""

    k: int = 10                 # bins per dimension
    prop_min: float = 0.0       # violation-proportion bin range
    prop_max: float = 2.0
    nc_threshold: float = 0.5   # activation threshold for nc
    tknc_k: int = 2             # top-k per layer for tknc

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.prop_min < self.prop_max:
            raise ValueError("proportion range must satisfy min < max")
        if not np.isfinite(self.nc_threshold):
            raise ValueError("nc threshold must be finite")


@dataclass
class ProfilingStats:
    """Per-dimension observed [lo, hi] over a profiling dataset."""

    space: str  # "outputs" | "neurons" | "features"
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo/hi must be 1-D arrays of equal length")
        if (self.lo > self.hi).any():
            raise ValueError("profiling stats require lo <= hi per dimension")

    @property
    def dimensions(self) -> int:
        return int(self.lo.shape[0])

    def to_json(self) -> dict:
        return {"space": self.space, "lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ProfilingStats":
        return cls(space=obj["space"], lo=np.array(obj["lo"]), hi=np.array(obj["hi"]))

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "ProfilingStats":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class TestRecord:
    """Everything the metrics may consume about one executed test."""

    __test__ = False  # keep pytest collection away from the Test* name

    image: np.ndarray
    raw: np.ndarray
    pattern: StimulationPattern
    report: ViolationReport
    trace: ActivationTrace | None = None
    features: np.ndarray | None = None


class CoverageState:
    """Bitset occupancy over a metric's item universe."""

    __slots__ = ("bits", "covered")

    def __init__(self, universe: int):
        self.bits = np.zeros(int(universe), dtype=bool)
        self.covered = 0

    @property
    def universe(self) -> int:
        return int(self.bits.shape[0])

    def mark(self, items: np.ndarray) -> int:
        """Set the given items; returns how many were newly covered."""
        if items.size == 0:
            return 0
        novel = items[~self.bits[items]]
        if novel.size == 0:
            return 0
        novel = np.unique(novel)
        self.bits[novel] = True
        self.covered += int(novel.size)
        return int(novel.size)

    def fraction(self) -> float:
        return self.covered / self.universe if self.universe else 0.0

    def digest(self) -> str:
        return hashlib.sha256(np.packbits(self.bits).tobytes()).hexdigest()


# --- binning helpers --------------------------------------------------------

def kmvp_bin(proportion: float, k: int, vmin: float = 0.0, vmax: float = 2.0,
             mode: str = "all") -> int | None:
    """Bin index for one violation proportion; None when the mode drops it.

    Out-of-range values land in the outermost bins.  mode="violation_only"
    returns None for proportions below 1; mode="vcc" forces k=2 over [min, 2].
    """
    if mode == "vcc":
        k, vmax = 2, 2.0
    if mode == "violation_only" and proportion < 1.0:
        return None
    width = (vmax - vmin) / k
    idx = int(np.floor((proportion - vmin) / width))
    return min(max(idx, 0), k - 1)


def _clamped_bins(values: np.ndarray, lo: np.ndarray, hi: np.ndarray, k: int) -> np.ndarray:
    """Vectorized lower-edge-inclusive binning with outermost-bin clamping.

    Degenerate dimensions (hi <= lo) always map to bin 0, leaving their
    remaining k-1 bins uncoverable.
    """
    span = hi - lo
    degenerate = span <= 0
    safe_span = np.where(degenerate, 1.0, span)
    idx = np.floor((values - lo) * (k / safe_span)).astype(np.int64)
    idx = np.clip(idx, 0, k - 1)
    return np.where(degenerate, 0, idx)


# --- metrics ----------------------------------------------------------------

class CoverageMetric:
    """Base: a fixed universe plus a pure record -> item-indices function."""

    name = "base"
    needs_trace = False
    needs_features = False
    profile_space: str | None = None  # outputs | neurons | features
    universe = 0

    def new_state(self) -> CoverageState:
        return CoverageState(self.universe)

    def items(self, record: TestRecord) -> np.ndarray:
        raise NotImplementedError

    def observe(self, state: CoverageState, record: TestRecord) -> int:
        return state.mark(self.items(record))


class NullCoverage(CoverageMetric):
    """No signal at all; used by the basic seed-management strategies."""

    name = "null"
    universe = 1

    def items(self, record: TestRecord) -> np.ndarray:
        return np.empty(0, dtype=np.int64)


class ViolationProportionBins(CoverageMetric):
    """Bins each constraint's violation proportion (severity coverage).

    Universe layout: k bins for each aggregate constraint (IC then AE),
    then k bins per electrode for each electrode-wise constraint (PI block,
    then CD block), giving k*2 + k*2*electrodes items.
    """

    def __init__(self, electrode_count: int, params: MetricParams, mode: str = "all"):
        if mode not in ("all", "violation_only", "vcc"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.k = 2 if mode == "vcc" else params.k
        self.vmin = params.prop_min
        self.vmax = 2.0 if mode == "vcc" else params.prop_max
        self.electrode_count = electrode_count
        self.name = {"all": "kmvp", "violation_only": "kmvp-v", "vcc": "vcc"}[mode]
        self.universe = self.k * 2 + self.k * 2 * electrode_count

    def items(self, record: TestRecord) -> np.ndarray:
        rep = record.report
        if rep.electrode_count != self.electrode_count:
            raise ValueError(f"report has {rep.electrode_count} electrodes, metric "
                             f"configured for {self.electrode_count}")
        props = np.concatenate(([rep.ic, rep.ae], rep.pi, rep.cd))
        width = (self.vmax - self.vmin) / self.k
        bins = np.clip(np.floor((props - self.vmin) / width).astype(np.int64), 0, self.k - 1)
        items = np.arange(props.shape[0], dtype=np.int64) * self.k + bins
        if self.mode == "violation_only":
            items = items[props >= 1.0]
        return items


class OutputRangeBins(CoverageMetric):
    """Bins each raw output dimension over its profiled [lo, hi] range."""

    name = "kmoc"
    profile_space = "outputs"

    def __init__(self, stats: ProfilingStats, params: MetricParams):
        if stats.space != "outputs":
            raise ValueError(f"kmoc needs output-space stats, got {stats.space!r}")
        self.stats = stats
        self.k = params.k
        self.universe = self.k * stats.dimensions

    def items(self, record: TestRecord) -> np.ndarray:
        values = np.asarray(record.raw, dtype=np.float64)
        if values.shape[0] != self.stats.dimensions:
            raise ValueError(f"raw output has {values.shape[0]} dimensions, stats "
                             f"profiled {self.stats.dimensions}")
        bins = _clamped_bins(values, self.stats.lo, self.stats.hi, self.k)
        return np.arange(values.shape[0], dtype=np.int64) * self.k + bins


class PixelBins(CoverageMetric):
    """Bins each pixel's value over the fixed [0, 1] range."""

    name = "kmic"

    def __init__(self, pixel_count: int, params: MetricParams):
        self.k = params.k
        self.pixel_count = pixel_count
        self.universe = self.k * pixel_count
        self._lo = np.zeros(pixel_count)
        self._hi = np.ones(pixel_count)

    def items(self, record: TestRecord) -> np.ndarray:
        pixels = np.asarray(record.image, dtype=np.float64).reshape(-1)
        if pixels.shape[0] != self.pixel_count:
            raise ValueError(f"image has {pixels.shape[0]} pixels, metric configured "
                             f"for {self.pixel_count}")
        bins = _clamped_bins(pixels, self._lo, self._hi, self.k)
        return np.arange(pixels.shape[0], dtype=np.int64) * self.k + bins


class FeatureRangeBins(CoverageMetric):
    """Bins extractor features over profiled ranges; out-of-range values are
    counted in the lowest or highest available bin."""

    name = "div-approx"
    needs_features = True
    profile_space = "features"

    def __init__(self, stats: ProfilingStats, params: MetricParams):
        if stats.space != "features":
            raise ValueError(f"div-approx needs feature-space stats, got {stats.space!r}")
        self.stats = stats
        self.k = params.k
        self.universe = self.k * stats.dimensions

    def items(self, record: TestRecord) -> np.ndarray:
        if record.features is None:
            raise ValueError("record has no feature vector")
        values = np.asarray(record.features, dtype=np.float64)
        if values.shape[0] != self.stats.dimensions:
            raise ValueError(f"feature vector has {values.shape[0]} dimensions, stats "
                             f"profiled {self.stats.dimensions}")
        bins = _clamped_bins(values, self.stats.lo, self.stats.hi, self.k)
        return np.arange(values.shape[0], dtype=np.int64) * self.k + bins


class _TraceMetric(CoverageMetric):
    needs_trace = True

    @staticmethod
    def _flat(record: TestRecord) -> np.ndarray:
        if record.trace is None:
            raise ValueError("record has no activation trace")
        return record.trace.flat.astype(np.float64)


class ThresholdNeurons(_TraceMetric):
    """A neuron is covered once its value reaches the activation threshold."""

    name = "nc"

    def __init__(self, neuron_count: int, params: MetricParams):
        self.threshold = params.nc_threshold
        self.universe = neuron_count

    def items(self, record: TestRecord) -> np.ndarray:
        return np.nonzero(self._flat(record) >= self.threshold)[0].astype(np.int64)


class NeuronRangeBins(_TraceMetric):
    """Bins each neuron's value over its profiled range; values outside the
    closed [lo, hi] range are ignored (the only metric that may drop a value)."""

    name = "kmnc"
    profile_space = "neurons"

    def __init__(self, stats: ProfilingStats, params: MetricParams):
        if stats.space != "neurons":
            raise ValueError(f"kmnc needs neuron-space stats, got {stats.space!r}")
        self.stats = stats
        self.k = params.k
        self.universe = self.k * stats.dimensions

    def items(self, record: TestRecord) -> np.ndarray:
        values = self._flat(record)
        lo, hi = self.stats.lo, self.stats.hi
        if values.shape[0] != self.stats.dimensions:
            raise ValueError(f"trace has {values.shape[0]} neurons, stats profiled "
                             f"{self.stats.dimensions}")
        span = hi - lo
        in_range = (values >= lo) & (values <= hi) & (span > 0)
        safe_span = np.where(span > 0, span, 1.0)
        bins = np.floor((values - lo) * (self.k / safe_span)).astype(np.int64)
        bins = np.minimum(bins, self.k - 1)  # val == hi lands in the top bin
        dims = np.nonzero(in_range)[0]
        return dims * self.k + bins[dims]


class NeuronBoundary(_TraceMetric):
    """Tracks excursions below lo and above hi per neuron (two items each).

    Universe layout: below-range items first (one per neuron), then
    above-range items.
    """

    name = "nbc"
    profile_space = "neurons"

    def __init__(self, stats: ProfilingStats, params: MetricParams):
        if stats.space != "neurons":
            raise ValueError(f"nbc needs neuron-space stats, got {stats.space!r}")
        self.stats = stats
        self.universe = 2 * stats.dimensions

    def items(self, record: TestRecord) -> np.ndarray:
        values = self._flat(record)
        below = np.nonzero(values < self.stats.lo)[0]
        above = np.nonzero(values > self.stats.hi)[0] + self.stats.dimensions
        return np.concatenate((below, above)).astype(np.int64)


class NeuronUpperBoundary(_TraceMetric):
    """Tracks neurons driven strictly above their profiled maximum."""

    name = "snac"
    profile_space = "neurons"

    def __init__(self, stats: ProfilingStats, params: MetricParams):
        if stats.space != "neurons":
            raise ValueError(f"snac needs neuron-space stats, got {stats.space!r}")
        self.stats = stats
        self.universe = stats.dimensions

    def items(self, record: TestRecord) -> np.ndarray:
        return np.nonzero(self._flat(record) > self.stats.hi)[0].astype(np.int64)


class TopNeuronsPerLayer(_TraceMetric):
    """Covers the k highest-valued neurons of each layer per test;
    ties break toward the lower neuron index."""

    name = "tknc"

    def __init__(self, layer_sizes: tuple[int, ...], params: MetricParams):
        self.layer_sizes = layer_sizes
        self.top_k = params.tknc_k
        self.universe = int(sum(layer_sizes))

    def items(self, record: TestRecord) -> np.ndarray:
        if record.trace is None:
            raise ValueError("record has no activation trace")
        out = []
        offset = 0
        for values in record.trace.layers:
            take = min(self.top_k, values.shape[0])
            # stable sort on negated values: equal values keep index order
            order = np.argsort(-values.astype(np.float64), kind="stable")[:take]
            out.append(order.astype(np.int64) + offset)
            offset += values.shape[0]
        return np.concatenate(out)


# --- profiling and construction ---------------------------------------------

def profile(model: ModelGraph, dataset, space: str,
            extractor: FeatureExtractor | None = None) -> ProfilingStats:
    """Per-dimension min/max of outputs, neurons or features over a dataset."""
    if space not in ("outputs", "neurons", "features"):
        raise ValueError(f"unknown profiling space {space!r}")
    lo = hi = None
    count = 0
    for image in dataset:
        if space == "outputs":
            values = forward(model, image).astype(np.float64)
        elif space == "neurons":
            _, trace = forward_traced(model, image)
            values = trace.flat.astype(np.float64)
        else:
            if extractor is None:
                raise ValueError("feature profiling needs an extractor")
            values = np.asarray(extractor(image), dtype=np.float64)
        if lo is None:
            lo = values.copy()
            hi = values.copy()
        else:
            np.minimum(lo, values, out=lo)
            np.maximum(hi, values, out=hi)
        count += 1
    if count == 0:
        raise ValueError("profiling dataset is empty")
    return ProfilingStats(space=space, lo=lo, hi=hi)


def build_metric(strategy: str, model: ModelGraph, params: MetricParams,
                 stats: ProfilingStats | None = None) -> CoverageMetric:
    """Instantiate the metric for a strategy name (null for basic strategies)."""
    if strategy in BASIC_STRATEGIES:
        return NullCoverage()
    if strategy == "kmvp":
        return ViolationProportionBins(model.layout.electrode_count, params, mode="all")
    if strategy == "kmvp-v":
        return ViolationProportionBins(model.layout.electrode_count, params,
                                       mode="violation_only")
    if strategy == "vcc":
        return ViolationProportionBins(model.layout.electrode_count, params, mode="vcc")
    if strategy == "kmic":
        return PixelBins(int(np.prod(model.input_shape)), params)
    if strategy == "nc":
        return ThresholdNeurons(model.neuron_count, params)
    if strategy == "tknc":
        return TopNeuronsPerLayer(model.layer_sizes, params)
    if strategy in ("kmoc", "kmnc", "nbc", "snac", "div-approx"):
        needed = {"kmoc": "outputs", "div-approx": "features"}.get(strategy, "neurons")
        if stats is None:
            raise ValueError(f"strategy {strategy!r} requires {needed}-space "
                             f"profiling stats")
        cls = {"kmoc": OutputRangeBins, "kmnc": NeuronRangeBins, "nbc": NeuronBoundary,
               "snac": NeuronUpperBoundary, "div-approx": FeatureRangeBins}[strategy]
        return cls(stats, params)
    raise ValueError(f"unknown strategy {strategy!r}")


def required_profile_space(strategy: str) -> str | None:
    return {"kmoc": "outputs", "kmnc": "neurons", "nbc": "neurons",
            "snac": "neurons", "div-approx": "features"}.get(strategy)
