"""The fuzzing loop: seed scheduling, mutant testing and violation collection.

One campaign runs a fixed test budget.  Each iteration picks a seed
(weight-proportional with a decaying weight and a floor), generates m
mutants, forwards them through the model, records safety violations, and
admits a mutant into the corpus only when it strictly increases coverage.
Basic strategies reuse the same loop with a different admission policy:
``all`` admits every mutant, ``none`` admits nothing, ``random`` tests
i.i.d. uniform images with no seed set, and ``local`` hammers the seed with
the most prior violations using small perturbations only.

Every test is appended to a campaign log (JSON-serializable dicts) from
which the whole run can be replayed and audited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coverage import (BASIC_STRATEGIES, CoverageMetric, CoverageState, MetricParams,
                       ProfilingStats, TestRecord, build_metric, profile,
                       required_profile_space)
from .features import FeatureExtractor
from .mutation import MutationConfig, MutationRecord, apply_transform, random_image, \
    random_mutation
from .nef import ModelGraph
from .runtime import decode_stimulation, forward, forward_traced
from .safety import SafetyLimits, evaluate


class FuzzError(RuntimeError):
    pass


@dataclass
class SeedEntry:
    id: int
    image: np.ndarray
    g: int = 0                      # prior selection count
    violation_yield: int = 0        # violations produced by this seed's mutants
    lineage: tuple[MutationRecord, ...] = ()


class Corpus:
    """Ordered seed set; ids are assigned in insertion order."""

    def __init__(self, images):
        self.entries: list[SeedEntry] = []
        for image in images:
            self.add(image)
        if not self.entries:
            raise FuzzError("corpus must start with at least one seed")

    def add(self, image: np.ndarray, lineage: tuple[MutationRecord, ...] = ()) -> SeedEntry:
        entry = SeedEntry(id=len(self.entries), image=np.asarray(image, dtype=np.float32),
                          lineage=lineage)
        self.entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx: int) -> SeedEntry:
        return self.entries[idx]


def seed_weight(g: int, gamma: float, p_min: float) -> float:
    """Selection weight for a seed picked g times before: max(1 - g/gamma, p_min)."""
    if g < 0:
        raise ValueError("selection count must be non-negative")
    if gamma <= 0 or not 0 < p_min < 1:
        raise ValueError("need gamma > 0 and 0 < p_min < 1")
    return max(1.0 - g / gamma, p_min)


def choose_seed(corpus: Corpus, rng: np.random.Generator, gamma: float,
                p_min: float) -> SeedEntry:
    """Sample a seed with probability proportional to its weight; bumps g."""
    weights = np.array([seed_weight(e.g, gamma, p_min) for e in corpus.entries])
    probs = weights / weights.sum()
    entry = corpus.entries[int(rng.choice(len(corpus), p=probs))]
    entry.g += 1
    return entry


def budget_for_strategy(baseline_per_test: float, strategy_per_test: float,
                        baseline_test_limit: int) -> int:
    """Scale the test budget so all strategies get equal wall-clock time."""
    if baseline_per_test <= 0 or strategy_per_test <= 0:
        raise ValueError("per-test timings must be positive")
    return max(1, math.floor(baseline_test_limit * baseline_per_test / strategy_per_test))


@dataclass
class ViolationFinding:
    image: np.ndarray
    lineage: tuple[MutationRecord, ...]
    report: object
    pattern: object
    test_index: int
    seed_id: int | None


class ViolationSet:
    """Discovered violating inputs, deduplicated by exact image bytes."""

    def __init__(self):
        self.findings: list[ViolationFinding] = []
        self._seen: set[bytes] = set()

    def add(self, finding: ViolationFinding) -> bool:
        key = finding.image.tobytes()
        if key in self._seen:
            return False
        self._seen.add(key)
        self.findings.append(finding)
        return True

    def __len__(self) -> int:
        return len(self.findings)

    def constraint_counts(self) -> dict[str, int]:
        counts = {"PI": 0, "CD": 0, "IC": 0, "AE": 0}
        for f in self.findings:
            for name, hit in f.report.constraint_flags().items():
                counts[name] += int(hit)
        return counts


@dataclass
class FuzzResult:
    violations: ViolationSet
    corpus: Corpus
    state: CoverageState
    metric: CoverageMetric
    tests_executed: int
    trajectory: list[tuple[int, float]] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)


class FuzzEngine:
    """Holds the per-campaign dependencies and runs the loop."""

    def __init__(self, model: ModelGraph, limits: SafetyLimits, strategy: str,
                 metric: CoverageMetric, mutation: MutationConfig,
                 rng: np.random.Generator, m: int = 10, gamma: float = 20.0,
                 p_min: float = 0.1, extractor: FeatureExtractor | None = None,
                 log_fn: Callable[[dict], None] | None = None):
        if m < 1:
            raise FuzzError("m (mutants per iteration) must be >= 1")
        self.model = model
        self.limits = limits
        self.strategy = strategy
        self.metric = metric
        self.mutation = mutation
        self.local_mutation = mutation.local()
        self.rng = rng
        self.m = m
        self.gamma = gamma
        self.p_min = p_min
        self.extractor = extractor
        self.log_fn = log_fn
        self.test_index = 0
        # admission policy: strict coverage increase unless a basic mode overrides
        self.admit_all = strategy == "all"
        self.admit_never = strategy in ("none", "random", "local")

    def run_test(self, image: np.ndarray) -> TestRecord:
        if self.metric.needs_trace:
            raw, trace = forward_traced(self.model, image)
        else:
            raw, trace = forward(self.model, image), None
        pattern = decode_stimulation(raw, self.model.layout)
        report = evaluate(pattern, self.limits)
        features = None
        if self.metric.needs_features:
            if self.extractor is None:
                raise FuzzError("metric needs features but no extractor configured")
            features = np.asarray(self.extractor(image), dtype=np.float64)
        return TestRecord(image=image, raw=raw, pattern=pattern, report=report,
                          trace=trace, features=features)

    def _log(self, entry: dict):
        if self.log_fn is not None:
            self.log_fn(entry)

    def observe_seed_set(self, corpus: Corpus, state: CoverageState):
        """Initial coverage over the seed set; seeds count against the budget."""
        for entry in corpus.entries:
            record = self.run_test(entry.image)
            new_items = self.metric.observe(state, record)
            self._log({"type": "seed", "test": self.test_index, "seed": entry.id,
                       "new_items": new_items, "coverage": state.fraction()})
            self.test_index += 1

    def _test_one_mutant(self, image: np.ndarray, mutation_record: MutationRecord | None,
                         seed: SeedEntry | None, corpus: Corpus,
                         violations: ViolationSet, state: CoverageState):
        record = self.run_test(image)
        new_items = 0 if self.admit_never else self.metric.observe(state, record)
        admitted = self.admit_all or (not self.admit_never and new_items > 0)
        admitted_id = None
        if admitted:
            lineage = (seed.lineage + (mutation_record,)) if seed is not None else \
                ((mutation_record,) if mutation_record is not None else ())
            admitted_id = corpus.add(image, lineage).id
        recorded = False
        if record.report.any_violation:
            if seed is not None:
                seed.violation_yield += 1
            lineage = (seed.lineage + (mutation_record,)) if seed is not None else \
                ((mutation_record,) if mutation_record is not None else ())
            recorded = violations.add(ViolationFinding(
                image=image, lineage=lineage, report=record.report,
                pattern=record.pattern, test_index=self.test_index,
                seed_id=seed.id if seed is not None else None))
        self._log({"type": "mutant", "test": self.test_index,
                   "seed": seed.id if seed is not None else None,
                   "mutation": mutation_record.to_json() if mutation_record else None,
                   "violated": record.report.any_violation,
                   "constraints": record.report.constraint_flags(),
                   "recorded": recorded, "admitted": admitted,
                   "admitted_id": admitted_id, "new_items": new_items,
                   "coverage": state.fraction()})
        self.test_index += 1

    def test_mutants(self, corpus: Corpus, violations: ViolationSet, state: CoverageState):
        """One iteration: choose a seed, test m mutants from it."""
        seed = choose_seed(corpus, self.rng, self.gamma, self.p_min)
        for j in range(self.m):
            image, record = random_mutation(seed.image, self.rng, self.mutation,
                                            parent_id=seed.id, draw_index=j)
            self._test_one_mutant(image, record, seed, corpus, violations, state)

    def b_local_step(self, corpus: Corpus, violations: ViolationSet, state: CoverageState):
        """Hammer the highest-yield seed with small local perturbations."""
        yields = [e.violation_yield for e in corpus.entries]
        if max(yields) > 0:
            seed = corpus.entries[int(np.argmax(yields))]  # argmax ties -> lowest id
            seed.g += 1
        else:
            seed = choose_seed(corpus, self.rng, self.gamma, self.p_min)
        for j in range(self.m):
            image, record = random_mutation(seed.image, self.rng, self.local_mutation,
                                            parent_id=seed.id, draw_index=j)
            self._test_one_mutant(image, record, seed, corpus, violations, state)

    def b_fr_step(self, corpus: Corpus, violations: ViolationSet, state: CoverageState):
        """Fully random images, no seed set involved."""
        shape = self.model.input_shape
        for j in range(self.m):
            sub_seed = int(self.rng.integers(2 ** 32))
            image = random_image(shape, sub_seed)
            record = MutationRecord(kind="random", params={"seed": sub_seed},
                                    parent_id=None, draw_index=j)
            self._test_one_mutant(image, record, None, corpus, violations, state)

    def step(self, corpus: Corpus, violations: ViolationSet, state: CoverageState):
        if self.strategy == "random":
            self.b_fr_step(corpus, violations, state)
        elif self.strategy == "local":
            self.b_local_step(corpus, violations, state)
        else:
            self.test_mutants(corpus, violations, state)


def fuzz(model: ModelGraph, seed_images, limits: SafetyLimits, *, strategy: str,
         test_limit: int, m: int = 10, gamma: float = 20.0, p_min: float = 0.1,
         mutation: MutationConfig | None = None, params: MetricParams | None = None,
         profile_images=None, stats: ProfilingStats | None = None,
         extractor: FeatureExtractor | None = None, rng_seed: int = 0,
         log_fn: Callable[[dict], None] | None = None,
         keep_log: bool = True) -> FuzzResult:
    """Run one fuzzing campaign and return the discovered violations.

    Profiling runs once up front when the metric requires it (pass either a
    profiling image set or precomputed stats).  The whole run is reproducible
    from the arguments plus rng_seed.
    """
    params = params or MetricParams()
    mutation = mutation or MutationConfig()
    space = required_profile_space(strategy)
    if space is not None and stats is None:
        if profile_images is None:
            raise FuzzError(f"strategy {strategy!r} requires a profiling dataset")
        stats = profile(model, profile_images, space, extractor=extractor)
    metric = build_metric(strategy, model, params, stats)

    log: list[dict] = []
    trajectory: list[tuple[int, float]] = []

    def _sink(entry: dict):
        if keep_log:
            log.append(entry)
        trajectory.append((entry["test"], entry["coverage"]))
        if log_fn is not None:
            log_fn(entry)

    engine = FuzzEngine(model, limits, strategy, metric, mutation,
                        np.random.default_rng(rng_seed), m=m, gamma=gamma,
                        p_min=p_min, extractor=extractor, log_fn=_sink)
    corpus = Corpus(seed_images)
    if test_limit < len(corpus):
        raise FuzzError(f"test limit {test_limit} is below the seed count {len(corpus)}")
    state = metric.new_state()
    violations = ViolationSet()
    engine.observe_seed_set(corpus, state)
    while engine.test_index < test_limit:
        engine.step(corpus, violations, state)

    summary = {"type": "summary", "tests": engine.test_index,
               "violations": len(violations), "covered": state.covered,
               "universe": state.universe, "coverage": state.fraction(),
               "bits_sha256": state.digest()}
    if keep_log:
        log.append(summary)
    if log_fn is not None:
        log_fn(summary)
    return FuzzResult(violations=violations, corpus=corpus, state=state, metric=metric,
                      tests_executed=engine.test_index, trajectory=trajectory, log=log)


# --- replay -----------------------------------------------------------------

@dataclass
class ReplayMismatch(Exception):
    test: int
    field_name: str
    logged: object
    replayed: object

    def __str__(self):
        return (f"replay mismatch at test {self.test}: {self.field_name} logged "
                f"{self.logged!r} but replayed {self.replayed!r}")


def replay_log(model: ModelGraph, seed_images, limits: SafetyLimits, *, strategy: str,
               log_entries: list[dict], m: int = 10,
               mutation: MutationConfig | None = None,
               params: MetricParams | None = None,
               stats: ProfilingStats | None = None, profile_images=None,
               extractor: FeatureExtractor | None = None) -> dict:
    """Re-derive every logged test and verify admissions, violations and
    coverage match the log exactly.  Returns the replayed summary.

    The log pins all nondeterminism (seed choices and mutation params), so
    replay needs no RNG.
    """
    params = params or MetricParams()
    mutation = mutation or MutationConfig()
    space = required_profile_space(strategy)
    if space is not None and stats is None:
        if profile_images is None:
            raise FuzzError(f"strategy {strategy!r} requires profiling data to replay")
        stats = profile(model, profile_images, space, extractor=extractor)
    metric = build_metric(strategy, model, params, stats)
    engine = FuzzEngine(model, limits, strategy, metric, mutation,
                        np.random.default_rng(0), m=m, extractor=extractor)
    corpus = Corpus(seed_images)
    state = metric.new_state()
    seen: set[bytes] = set()
    recorded_total = 0

    def check(test, name, logged, replayed):
        if logged != replayed:
            raise ReplayMismatch(test, name, logged, replayed)

    summary = None
    for entry in log_entries:
        kind = entry["type"]
        if kind == "summary":
            summary = entry
            continue
        test = entry["test"]
        if kind == "seed":
            seed = corpus[entry["seed"]]
            record = engine.run_test(seed.image)
            new_items = metric.observe(state, record)
            check(test, "new_items", entry["new_items"], new_items)
            check(test, "coverage", entry["coverage"], state.fraction())
            continue
        mut = entry.get("mutation")
        if mut is None:
            raise FuzzError(f"mutant log entry {test} has no mutation record")
        mrec = MutationRecord.from_json(mut)
        if mrec.kind == "random":
            image = random_image(model.input_shape, int(mrec.params["seed"]))
        else:
            parent = corpus[entry["seed"]]
            image = apply_transform(mrec.kind, mrec.params, parent.image)
        record = engine.run_test(image)
        new_items = 0 if engine.admit_never else metric.observe(state, record)
        admitted = engine.admit_all or (not engine.admit_never and new_items > 0)
        check(test, "violated", entry["violated"], record.report.any_violation)
        check(test, "constraints", entry["constraints"], record.report.constraint_flags())
        check(test, "admitted", entry["admitted"], admitted)
        check(test, "new_items", entry["new_items"], new_items)
        if admitted:
            replica = corpus.add(image)
            check(test, "admitted_id", entry["admitted_id"], replica.id)
        recorded = False
        if record.report.any_violation:
            key = image.tobytes()
            if key not in seen:
                seen.add(key)
                recorded = True
                recorded_total += 1
        check(test, "recorded", entry["recorded"], recorded)
        check(test, "coverage", entry["coverage"], state.fraction())

    replayed_summary = {"violations": recorded_total, "covered": state.covered,
                        "universe": state.universe, "coverage": state.fraction(),
                        "bits_sha256": state.digest()}
    if summary is not None:
        for key, value in replayed_summary.items():
            check(summary["tests"], key, summary[key], value)
    return replayed_summary
