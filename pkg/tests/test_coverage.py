import numpy as np
import pytest

from conftest import make_test_records
from stimfuzz.coverage import (CoverageState, FeatureRangeBins, MetricParams,
                               NeuronBoundary, NeuronRangeBins, NeuronUpperBoundary,
                               NullCoverage, OutputRangeBins, PixelBins,
                               ProfilingStats, TestRecord, ThresholdNeurons,
                               TopNeuronsPerLayer, ViolationProportionBins,
                               build_metric, kmvp_bin, profile,
                               required_profile_space)
from stimfuzz.features import pooled_features
from stimfuzz.nef import EncoderOutputLayout, LayerSpec, build_model
from stimfuzz.runtime import ActivationTrace, StimulationPattern, forward
from stimfuzz.safety import PRESETS, evaluate


def pattern_record(freqs, pulses, amps, limits=None, image=None):
    """TestRecord built directly from a pattern (raw/image are placeholders)."""
    pattern = StimulationPattern(frequency_hz=np.asarray(freqs, dtype=np.float64),
                                 pulse_ms=np.asarray(pulses, dtype=np.float64),
                                 amplitude_ua=np.asarray(amps, dtype=np.float64))
    report = evaluate(pattern, limits or PRESETS["retinal"])
    if image is None:
        image = np.zeros((2, 2), dtype=np.float32)
    raw = np.concatenate([pattern.frequency_hz, pattern.pulse_ms, pattern.amplitude_ua])
    return TestRecord(image=image, raw=raw, pattern=pattern, report=report)


def trace_record(layer_values, image=None):
    trace = ActivationTrace(layers=[np.asarray(v, dtype=np.float32)
                                    for v in layer_values])
    rec = pattern_record([100.0], [1.0], [0.0], image=image)
    rec.trace = trace
    return rec


class TestKmvpBin:
    def test_lower_edge(self):
        assert kmvp_bin(0.0, k=10, vmin=0.0, vmax=2.0) == 0

    def test_hand_binning(self):
        assert kmvp_bin(1.25, k=10, vmin=0.0, vmax=2.0) == 6  # floor(1.25/0.2)

    def test_out_of_range_clamps_to_outermost(self):
        assert kmvp_bin(3.7, k=10, vmin=0.0, vmax=2.0) == 9
        assert kmvp_bin(-0.5, k=10, vmin=0.0, vmax=2.0) == 0

    def test_violation_only_drops_safe_values(self):
        assert kmvp_bin(0.8, k=10, mode="violation_only") is None
        assert kmvp_bin(1.0, k=10, mode="violation_only") == 5

    def test_vcc_forces_two_bins(self):
        assert kmvp_bin(0.5, k=10, mode="vcc") == 0
        assert kmvp_bin(1.5, k=10, mode="vcc") == 1
        assert kmvp_bin(5.0, k=10, mode="vcc") == 1


class TestViolationProportionBins:
    def test_universe_arithmetic(self):
        metric = ViolationProportionBins(225, MetricParams(k=10))
        assert metric.universe == 10 * 2 + 10 * 2 * 225  # 4520

    def test_zero_record_marks_one_bin_per_dimension(self):
        metric = ViolationProportionBins(2, MetricParams(k=10))
        state = metric.new_state()
        rec = pattern_record([100.0, 100.0], [0.0, 0.0], [0.0, 0.0])
        assert metric.observe(state, rec) == 6  # 2 aggregate + 2*2 electrode-wise
        assert metric.observe(state, rec) == 0  # idempotent

    def test_violation_only_mode_needs_proportion_at_least_one(self):
        metric = ViolationProportionBins(2, MetricParams(k=10), mode="violation_only")
        state = metric.new_state()
        safe = pattern_record([100.0, 100.0], [1.0, 1.0], [10.0, 10.0])
        assert metric.observe(state, safe) == 0
        hot = pattern_record([100.0, 100.0], [12.0, 1.0], [10.0, 10.0])  # PI 2.4
        assert metric.observe(state, hot) == 1

    def test_electrode_count_mismatch(self):
        metric = ViolationProportionBins(4, MetricParams())
        with pytest.raises(ValueError, match="electrode"):
            metric.observe(metric.new_state(),
                           pattern_record([100.0], [1.0], [0.0]))


class TestOutputRangeBins:
    def stats(self, dims=1, lo=0.0, hi=300.0):
        return ProfilingStats(space="outputs", lo=np.full(dims, lo), hi=np.full(dims, hi))

    def rec(self, raw):
        rec = pattern_record([100.0], [1.0], [0.0])
        rec.raw = np.asarray(raw, dtype=np.float64)
        return rec

    def test_hand_binning(self):
        metric = OutputRangeBins(self.stats(), MetricParams(k=10))
        state = metric.new_state()
        metric.observe(state, self.rec([145.0]))
        assert state.bits[4]  # floor(145/30)

    def test_top_edge_inclusive(self):
        metric = OutputRangeBins(self.stats(), MetricParams(k=10))
        state = metric.new_state()
        metric.observe(state, self.rec([300.0]))
        assert state.bits[9]

    def test_out_of_range_clamps(self):
        metric = OutputRangeBins(self.stats(), MetricParams(k=10))
        state = metric.new_state()
        metric.observe(state, self.rec([-50.0]))
        metric.observe(state, self.rec([900.0]))
        assert state.bits[0] and state.bits[9]
        assert state.covered == 2

    def test_degenerate_dimension_maps_to_bin_zero(self):
        metric = OutputRangeBins(self.stats(lo=5.0, hi=5.0), MetricParams(k=10))
        state = metric.new_state()
        for value in (5.0, -1.0, 80.0):
            metric.observe(state, self.rec([value]))
        assert state.covered == 1 and state.bits[0]

    def test_universe(self):
        metric = OutputRangeBins(self.stats(dims=675), MetricParams(k=10))
        assert metric.universe == 6750


class TestPixelBins:
    def test_all_zero_image(self):
        metric = PixelBins(4, MetricParams(k=4))
        state = metric.new_state()
        rec = pattern_record([100.0], [1.0], [0.0],
                             image=np.zeros((2, 2), dtype=np.float32))
        assert metric.observe(state, rec) == 4  # bin 0 for every pixel

    def test_hand_bins(self):
        metric = PixelBins(1, MetricParams(k=4))
        state = metric.new_state()
        rec = pattern_record([100.0], [1.0], [0.0],
                             image=np.array([[0.3]], dtype=np.float32))
        metric.observe(state, rec)
        assert state.bits[1]  # floor(0.3/0.25)
        rec_top = pattern_record([100.0], [1.0], [0.0],
                                 image=np.array([[1.0]], dtype=np.float32))
        metric.observe(state, rec_top)
        assert state.bits[3]  # top edge inclusive


class TestFeatureRangeBins:
    def metric(self, k=5):
        stats = ProfilingStats(space="features", lo=np.zeros(1), hi=np.ones(1))
        return FeatureRangeBins(stats, MetricParams(k=k))

    def rec(self, value):
        rec = pattern_record([100.0], [1.0], [0.0])
        rec.features = np.array([value], dtype=np.float64)
        return rec

    def test_above_range_counts_in_highest_bin(self):
        metric = self.metric()
        state = metric.new_state()
        metric.observe(state, self.rec(1.5))
        assert state.bits[4]

    def test_below_range_counts_in_lowest_bin(self):
        metric = self.metric()
        state = metric.new_state()
        metric.observe(state, self.rec(-0.2))
        assert state.bits[0]

    def test_hand_bin(self):
        metric = self.metric()
        state = metric.new_state()
        metric.observe(state, self.rec(0.5))
        assert state.bits[2]  # floor(0.5/0.2)


class TestNeuronMetrics:
    def test_nc_threshold(self):
        metric = ThresholdNeurons(2, MetricParams(nc_threshold=0.5))
        state = metric.new_state()
        assert metric.observe(state, trace_record([[0.2, 0.7]])) == 1
        assert state.bits.tolist() == [False, True]
        # threshold itself activates (>=)
        assert metric.observe(state, trace_record([[0.5, 0.0]])) == 1

    def test_kmnc_bins_and_ignores_out_of_range(self):
        stats = ProfilingStats(space="neurons", lo=np.zeros(1), hi=np.ones(1))
        metric = NeuronRangeBins(stats, MetricParams(k=5))
        state = metric.new_state()
        assert metric.observe(state, trace_record([[0.35]])) == 1
        assert state.bits[1]
        assert metric.observe(state, trace_record([[1.2]])) == 0   # ignored
        assert metric.observe(state, trace_record([[-0.1]])) == 0  # ignored
        assert metric.observe(state, trace_record([[1.0]])) == 1   # == hi -> top bin
        assert state.bits[4]

    def test_nbc_boundary_items(self):
        stats = ProfilingStats(space="neurons", lo=np.zeros(2), hi=np.ones(2))
        metric = NeuronBoundary(stats, MetricParams())
        assert metric.universe == 4
        state = metric.new_state()
        assert metric.observe(state, trace_record([[-0.5, 0.5]])) == 1  # below n0
        assert metric.observe(state, trace_record([[0.5, 1.5]])) == 1   # above n1
        assert state.bits.tolist() == [True, False, False, True]
        # boundary values are not excursions
        assert metric.observe(state, trace_record([[0.0, 1.0]])) == 0

    def test_snac_strictly_above(self):
        stats = ProfilingStats(space="neurons", lo=np.zeros(1), hi=np.ones(1))
        metric = NeuronUpperBoundary(stats, MetricParams())
        state = metric.new_state()
        assert metric.observe(state, trace_record([[1.0]])) == 0
        assert metric.observe(state, trace_record([[1.2]])) == 1

    def test_tknc_top_k_with_tie_break(self):
        metric = TopNeuronsPerLayer((3, 2), MetricParams(tknc_k=1))
        state = metric.new_state()
        # layer 1: tie between neurons 0 and 1 -> lower index wins
        rec = trace_record([[0.5, 0.5, 0.1], [0.0, 0.9]])
        assert metric.observe(state, rec) == 2
        assert state.bits.tolist() == [True, False, False, False, True]

    def test_tknc_k_larger_than_layer(self):
        metric = TopNeuronsPerLayer((2,), MetricParams(tknc_k=5))
        state = metric.new_state()
        assert metric.observe(state, trace_record([[0.1, 0.2]])) == 2


class TestProfiling:
    def identity_model(self):
        layer = LayerSpec("dense", {"in_size": 4, "out_size": 4},
                          weight=np.eye(4, dtype=np.float32),
                          bias=np.zeros(4, dtype=np.float32))
        layout = EncoderOutputLayout(electrode_count=4, params_per_electrode=1,
                                     ordering="a", fixed_frequency_hz=100.0,
                                     fixed_pulse_ms=1.0)
        return build_model([layer], (2, 2), layout)

    def test_min_max_over_dataset(self):
        model = self.identity_model()
        images = [np.full((2, 2), v, dtype=np.float32) for v in (0.1, 0.9, 0.5)]
        stats = profile(model, images, "outputs")
        assert stats.lo[0] == pytest.approx(np.float32(0.1))
        assert stats.hi[0] == pytest.approx(np.float32(0.9))

    def test_single_image_degenerates(self):
        model = self.identity_model()
        stats = profile(model, [np.full((2, 2), 0.4, dtype=np.float32)], "outputs")
        assert np.array_equal(stats.lo, stats.hi)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            profile(self.identity_model(), [], "outputs")

    def test_deterministic_for_fixed_order(self, retinal_model, profile_set):
        a = profile(retinal_model, profile_set, "outputs")
        b = profile(retinal_model, profile_set, "outputs")
        assert np.array_equal(a.lo, b.lo) and np.array_equal(a.hi, b.hi)

    def test_json_sidecar_round_trip(self, tmp_path, retinal_model, profile_set):
        stats = profile(retinal_model, profile_set[:10], "neurons")
        path = tmp_path / "stats.json"
        stats.save(path)
        loaded = ProfilingStats.load(path)
        assert loaded.space == "neurons"
        assert np.array_equal(loaded.lo, stats.lo)
        assert np.array_equal(loaded.hi, stats.hi)

    def test_feature_space_needs_extractor(self, retinal_model, profile_set):
        with pytest.raises(ValueError, match="extractor"):
            profile(retinal_model, profile_set[:3], "features")
        stats = profile(retinal_model, profile_set[:3], "features",
                        extractor=lambda im: pooled_features(im, 8))
        assert stats.dimensions == 64


def all_metrics(model, records):
    """One configured instance of every real (non-basic) metric."""
    params = MetricParams(k=10, tknc_k=2)
    raw_vals = np.stack([r.raw for r in records])
    out_stats = ProfilingStats("outputs", raw_vals.min(0), raw_vals.max(0))
    # shrink ranges by 10% of the span so boundary metrics see excursions
    traces = np.stack([r.trace.flat for r in records])
    span = traces.max(0) - traces.min(0)
    neuron_stats = ProfilingStats("neurons", traces.min(0) + 0.1 * span,
                                  traces.max(0) - 0.1 * span)
    feats = np.stack([r.features for r in records])
    fspan = feats.max(0) - feats.min(0)
    feat_stats = ProfilingStats("features", feats.min(0) + 0.1 * fspan,
                                feats.max(0) - 0.1 * fspan)
    return [
        ViolationProportionBins(model.layout.electrode_count, params, "all"),
        ViolationProportionBins(model.layout.electrode_count, params, "violation_only"),
        ViolationProportionBins(model.layout.electrode_count, params, "vcc"),
        OutputRangeBins(out_stats, params),
        PixelBins(int(np.prod(model.input_shape)), params),
        FeatureRangeBins(feat_stats, params),
        ThresholdNeurons(model.neuron_count, params),
        NeuronRangeBins(neuron_stats, params),
        NeuronBoundary(neuron_stats, params),
        NeuronUpperBoundary(neuron_stats, params),
        TopNeuronsPerLayer(model.layer_sizes, params),
    ]


@pytest.fixture(scope="module")
def records(retinal_model):
    return make_test_records(retinal_model, 120, rng_seed=5,
                             extractor=lambda im: pooled_features(im, 8))


class TestStateInvariants:
    def test_incremental_equals_recompute(self, retinal_model, records):
        for metric in all_metrics(retinal_model, records):
            incremental = metric.new_state()
            for rec in records:
                metric.observe(incremental, rec)
            recomputed = metric.new_state()
            for rec in records:
                metric.observe(recomputed, rec)
            assert np.array_equal(incremental.bits, recomputed.bits), metric.name

    def test_order_independence(self, retinal_model, records):
        rng = np.random.default_rng(0)
        for metric in all_metrics(retinal_model, records):
            forward_state = metric.new_state()
            for rec in records:
                metric.observe(forward_state, rec)
            shuffled = list(records)
            rng.shuffle(shuffled)
            shuffled_state = metric.new_state()
            for rec in shuffled:
                metric.observe(shuffled_state, rec)
            assert np.array_equal(forward_state.bits, shuffled_state.bits), metric.name

    def test_monotone_and_observe_iff_increase(self, retinal_model, records):
        for metric in all_metrics(retinal_model, records):
            state = metric.new_state()
            last = 0.0
            for rec in records:
                before = state.fraction()
                new_items = metric.observe(state, rec)
                after = state.fraction()
                assert after >= before
                assert (new_items > 0) == (after > before), metric.name
                assert 0.0 <= after <= 1.0
                last = after
            assert state.covered == int(state.bits.sum())

    def test_fraction_edges(self):
        state = CoverageState(12)
        assert state.fraction() == 0.0
        state.mark(np.arange(3))
        assert state.fraction() == 0.25
        state.mark(np.arange(12))
        assert state.fraction() == 1.0


def test_build_metric_dispatch(retinal_model, profile_set):
    params = MetricParams()
    assert isinstance(build_metric("none", retinal_model, params), NullCoverage)
    assert build_metric("kmvp", retinal_model, params).universe == 4520
    with pytest.raises(ValueError, match="profiling"):
        build_metric("kmoc", retinal_model, params)
    stats = profile(retinal_model, profile_set[:5], "outputs")
    assert build_metric("kmoc", retinal_model, params, stats).universe == 6750
    with pytest.raises(ValueError, match="unknown strategy"):
        build_metric("bogus", retinal_model, params)


def test_required_profile_space():
    assert required_profile_space("kmoc") == "outputs"
    assert required_profile_space("kmnc") == "neurons"
    assert required_profile_space("div-approx") == "features"
    assert required_profile_space("kmvp") is None
    assert required_profile_space("none") is None
