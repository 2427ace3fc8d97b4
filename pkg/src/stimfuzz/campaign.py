"""Campaign orchestration: config files, artifacts, reports and comparison.

A campaign config is a TOML (or JSON) file with sections [model], [limits],
[strategy], [mutation], [budget] and [diversity].  Running a campaign
executes profiling (when the metric needs it), optional equal-wall-clock
budget calibration, the fuzzing loop, and diversity scoring, then writes:

    report.json           deterministic campaign report
    timings.json          wall-clock numbers (kept out of the report)
    campaign_log.jsonl    append-only per-test log, replayable
    profiling_stats.json  range stats sidecar (when profiled)
    violations/           one PGM per unique violating input + manifest.json

Violations are findings, not failures: a campaign that finds them still
succeeds.  Config problems map to ConfigError (CLI exit 2); everything else
raises normally (CLI exit 1).
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import diversity as diversity_mod
from .coverage import MetricParams, ProfilingStats, profile, required_profile_space
from .features import make_extractor
from .fuzzer import FuzzResult, budget_for_strategy, fuzz
from .images import load_image, load_image_dir, save_pgm
from .mutation import KINDS, MutationConfig
from .nef import load_model
from .safety import PRESETS, SafetyLimits


class ConfigError(ValueError):
    """Invalid campaign configuration (schema violation or missing files)."""


# --- config schema -----------------------------------------------------------

class ModelSection(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())
    path: str
    seed_images: list[str] = Field(default_factory=list)
    seed_dir: str | None = None
    profiling_data: str | None = None
    profiling_stats: str | None = None  # reuse a saved sidecar instead of re-profiling

    @model_validator(mode="after")
    def _check_seeds(self):
        if not self.seed_images and self.seed_dir is None:
            raise ValueError("need seed_images or seed_dir")
        return self


class LimitsSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    preset: Literal["retinal", "cortical"] | None = None
    charge_limit_nc: float | None = None
    current_limit_ua: float | None = None
    active_limit: int | None = None
    activity_epsilon_ua: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        explicit = (self.charge_limit_nc, self.current_limit_ua, self.active_limit)
        if self.preset is None and any(v is None for v in explicit):
            raise ValueError("need a preset or all three explicit limits")
        return self

    def resolve(self) -> SafetyLimits:
        if self.preset is not None and self.charge_limit_nc is None:
            base = PRESETS[self.preset]
            return SafetyLimits(base.charge_limit_nc, base.current_limit_ua,
                                base.active_limit, self.activity_epsilon_ua)
        return SafetyLimits(self.charge_limit_nc, self.current_limit_ua,
                            self.active_limit, self.activity_epsilon_ua)


class StrategySection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: Literal["none", "all", "random", "local", "nc", "kmnc", "nbc", "snac",
                  "tknc", "kmvp", "kmvp-v", "vcc", "kmoc", "kmic", "div-approx"]
    k: int = 10
    prop_min: float = 0.0
    prop_max: float = 2.0
    nc_threshold: float = 0.5
    tknc_k: int = 2
    gamma: float = 20.0
    p_min: float = 0.1
    rng_seed: int = 0

    def metric_params(self) -> MetricParams:
        return MetricParams(k=self.k, prop_min=self.prop_min, prop_max=self.prop_max,
                            nc_threshold=self.nc_threshold, tknc_k=self.tknc_k)


class MutationSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kinds: list[str] = Field(default_factory=lambda: list(KINDS))
    translate_frac: float = 0.1
    rotate_deg: float = 15.0
    scale_lo: float = 0.8
    scale_hi: float = 1.2
    shear_max: float = 0.15
    brightness_max: float = 0.3
    contrast_lo: float = 0.7
    contrast_hi: float = 1.3
    blur_sigma_lo: float = 0.5
    blur_sigma_hi: float = 1.5
    noise_sigma_lo: float = 0.02
    noise_sigma_hi: float = 0.08
    pixel_frac: float = 0.01
    pixel_delta: float = 0.2

    def resolve(self) -> MutationConfig:
        data = self.model_dump()
        data["kinds"] = tuple(data["kinds"])
        try:
            return MutationConfig(**data)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


class BudgetSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    test_limit: int = Field(ge=1)
    mutants_per_iteration: int = Field(default=10, ge=1)
    equalize_to_baseline: bool = False
    calibration_tests: int = Field(default=100, ge=10)


class DiversitySection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    extractor: str = "pool8"
    subset_size: int = Field(default=200, ge=1)
    subsets: int = Field(default=5, ge=1)
    vd_normalize: bool = False  # min-max scale violation-space columns first


class CampaignConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    model: ModelSection
    limits: LimitsSection
    strategy: StrategySection
    budget: BudgetSection
    mutation: MutationSection = Field(default_factory=MutationSection)
    diversity: DiversitySection = Field(default_factory=DiversitySection)


def load_config(path: str | Path) -> CampaignConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text())
        else:
            data = tomllib.loads(path.read_text())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data)


def parse_config(data: dict) -> CampaignConfig:
    try:
        return CampaignConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


# --- campaign execution ------------------------------------------------------

def _resolve_paths(config: CampaignConfig, base: Path):
    """Resolve file references relative to the config location and check them."""
    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else base / path

    model_path = resolve(config.model.path)
    if not model_path.is_file():
        raise ConfigError(f"model file not found: {model_path}")
    seed_paths = [resolve(p) for p in config.model.seed_images]
    for p in seed_paths:
        if not p.is_file():
            raise ConfigError(f"seed image not found: {p}")
    seed_dir = resolve(config.model.seed_dir) if config.model.seed_dir else None
    if seed_dir is not None and not seed_dir.is_dir():
        raise ConfigError(f"seed directory not found: {seed_dir}")
    prof_dir = resolve(config.model.profiling_data) if config.model.profiling_data else None
    if prof_dir is not None and not prof_dir.is_dir():
        raise ConfigError(f"profiling data directory not found: {prof_dir}")
    stats_path = resolve(config.model.profiling_stats) if config.model.profiling_stats \
        else None
    if stats_path is not None and not stats_path.is_file():
        raise ConfigError(f"profiling stats file not found: {stats_path}")
    return model_path, seed_paths, seed_dir, prof_dir, stats_path


def _measure_per_test(model, seeds, limits, strategy, tests, config, extractor,
                      profile_imgs) -> float:
    start = time.perf_counter()
    fuzz(model, seeds, limits, strategy=strategy, test_limit=max(tests, len(seeds) + 1),
         m=config.budget.mutants_per_iteration, gamma=config.strategy.gamma,
         p_min=config.strategy.p_min, mutation=config.mutation.resolve(),
         params=config.strategy.metric_params(), profile_images=profile_imgs,
         extractor=extractor, rng_seed=config.strategy.rng_seed, keep_log=False)
    return (time.perf_counter() - start) / max(tests, 1)


def run_campaign(config: CampaignConfig, out_dir: str | Path,
                 rng_seed: int | None = None, base_dir: str | Path = ".") -> dict:
    """Execute one campaign; writes artifacts under out_dir and returns the report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path, seed_paths, seed_dir, prof_dir, stats_path = \
        _resolve_paths(config, Path(base_dir))

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    model = load_model(model_path.read_bytes())
    seeds = [load_image(p) for p in seed_paths]
    if seed_dir is not None:
        seeds.extend(load_image_dir(seed_dir))
    effective_seed = config.strategy.rng_seed if rng_seed is None else rng_seed
    strategy = config.strategy.name
    extractor = make_extractor(config.diversity.extractor)

    profile_imgs = None
    saved_stats = None
    space = required_profile_space(strategy)
    if space is not None:
        if stats_path is not None:
            saved_stats = ProfilingStats.load(stats_path)
            if saved_stats.space != space:
                raise ConfigError(f"profiling stats cover {saved_stats.space!r} but "
                                  f"strategy {strategy!r} needs {space!r}")
        elif prof_dir is None:
            raise ConfigError(f"strategy {strategy!r} needs [model].profiling_data "
                              f"or [model].profiling_stats")
        else:
            profile_imgs = load_image_dir(prof_dir)
    timings["setup_s"] = time.perf_counter() - t0

    # equal wall-clock budgeting: scale the test budget by measured per-test cost
    test_limit = config.budget.test_limit
    if config.budget.equalize_to_baseline and strategy != "none":
        t0 = time.perf_counter()
        cal = config.budget.calibration_tests
        base_per = _measure_per_test(model, seeds, config.limits.resolve(), "none",
                                     cal, config, extractor, None)
        strat_per = _measure_per_test(model, seeds, config.limits.resolve(), strategy,
                                      cal, config, extractor, profile_imgs)
        test_limit = budget_for_strategy(base_per, strat_per, config.budget.test_limit)
        timings["calibration_s"] = time.perf_counter() - t0
        timings["baseline_per_test_s"] = base_per
        timings["strategy_per_test_s"] = strat_per

    stats = None
    if space is not None:
        t0 = time.perf_counter()
        stats = saved_stats if saved_stats is not None else \
            profile(model, profile_imgs, space, extractor=extractor)
        stats.save(out / "profiling_stats.json")
        timings["profiling_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    log_path = out / "campaign_log.jsonl"
    with open(log_path, "w") as log_file:
        def write_log(entry: dict):
            log_file.write(json.dumps(entry, sort_keys=True) + "\n")

        result = fuzz(model, seeds, config.limits.resolve(), strategy=strategy,
                      test_limit=test_limit, m=config.budget.mutants_per_iteration,
                      gamma=config.strategy.gamma, p_min=config.strategy.p_min,
                      mutation=config.mutation.resolve(),
                      params=config.strategy.metric_params(), stats=stats,
                      extractor=extractor, rng_seed=effective_seed,
                      log_fn=write_log, keep_log=False)
    timings["fuzzing_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    scores = None
    if len(result.violations) > 0:
        scores = diversity_mod.diversity_summary(
            result.violations, np.random.default_rng(effective_seed), extractor,
            subset_size=config.diversity.subset_size, subsets=config.diversity.subsets,
            normalize_vd=config.diversity.vd_normalize)
    _write_violations(out, result)
    timings["reporting_s"] = time.perf_counter() - t0

    report = {
        "config": config.model_dump(),
        "rng_seed": effective_seed,
        "strategy": strategy,
        "model_path": str(model_path),
        "model_fixture": model.metadata.get("fixture"),
        "seed_count": len(seeds),
        "test_limit": test_limit,
        "tests_executed": result.tests_executed,
        "violations": {
            "unique": len(result.violations),
            "per_constraint": result.violations.constraint_counts(),
        },
        "coverage": {
            "final": result.state.fraction(),
            "covered": result.state.covered,
            "universe": result.state.universe,
            "trajectory": [[t, c] for t, c in result.trajectory],
        },
        "diversity": scores.to_json() if scores is not None else None,
    }
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2))
    (out / "timings.json").write_text(json.dumps(timings, sort_keys=True, indent=2))
    return report


def _write_violations(out: Path, result: FuzzResult):
    vdir = out / "violations"
    vdir.mkdir(exist_ok=True)
    manifest = []
    for i, finding in enumerate(result.violations.findings):
        name = f"v{i:06d}.pgm"
        save_pgm(vdir / name, finding.image)
        manifest.append({
            "image": name,
            "test_index": finding.test_index,
            "seed_id": finding.seed_id,
            "lineage": [r.to_json() for r in finding.lineage],
            "constraints": finding.report.constraint_flags(),
            "proportions": {
                "PI_max": float(finding.report.pi.max()),
                "CD_max": float(finding.report.cd.max()),
                "IC": finding.report.ic,
                "AE": finding.report.ae,
            },
        })
    (vdir / "manifest.json").write_text(json.dumps(
        {"note": "images are 8-bit quantized; exact inputs replay from the campaign log",
         "violations": manifest}, sort_keys=True, indent=2))


# --- cross-run comparison ----------------------------------------------------

def _zscores(values: list[float]) -> list[float]:
    """Population z-scores; zero-variance columns map to all zeros and -inf
    entries land one unit below the lowest finite score."""
    arr = np.array(values, dtype=np.float64)
    finite = np.isfinite(arr)
    if finite.sum() == 0:
        return [0.0] * len(values)
    mu = arr[finite].mean()
    sigma = arr[finite].std()
    z = np.zeros(len(values))
    if sigma > 0:
        z[finite] = (arr[finite] - mu) / sigma
    floor = z[finite].min() - 1.0 if sigma > 0 else -1.0
    z[~finite] = floor
    return [float(v) for v in z]


def _report_diversity(report: dict) -> tuple[float, float]:
    """(gd, vd) for comparison; a report with no violations scores as having
    no spread at all."""
    div = report.get("diversity")
    if div is None:
        return float("-inf"), 0.0
    scores = diversity_mod.DiversityScores.from_json(div)
    return scores.gd_logdet, scores.vd_std


def compare(reports: list[dict]) -> list[dict]:
    """Rank campaign reports by a combined violation/diversity score.

    Violation counts and diversity are z-scored across the compared set
    (diversity is the mean of the GD and VD z-scores); the combined score
    weights the two equally.  Rows come back sorted best-first.
    """
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    keys = {(r["model_path"], json.dumps(r["config"]["limits"], sort_keys=True))
            for r in reports}
    if len(keys) > 1:
        raise ValueError("reports are not comparable: model or limits differ")
    counts = [float(r["violations"]["unique"]) for r in reports]
    gds = [_report_diversity(r)[0] for r in reports]
    vds = [_report_diversity(r)[1] for r in reports]
    z_viol = _zscores(counts)
    z_gd = _zscores(gds)
    z_vd = _zscores(vds)
    rows = []
    for i, report in enumerate(reports):
        z_div = (z_gd[i] + z_vd[i]) / 2.0
        rows.append({
            "label": report["strategy"],
            "model": report.get("model_fixture") or report["model_path"],
            "violations": int(counts[i]),
            "gd_logdet": gds[i],
            "vd_std": vds[i],
            "z_violations": z_viol[i],
            "z_diversity": z_div,
            "combined": (z_viol[i] + z_div) / 2.0,
        })
    rows.sort(key=lambda r: -r["combined"])
    return rows


def comparison_csv(rows: list[dict]) -> str:
    header = "label,model,violations,gd_logdet,vd_std,z_violations,z_diversity,combined"
    lines = [header]
    for r in rows:
        lines.append(f"{r['label']},{r['model']},{r['violations']},{r['gd_logdet']},"
                     f"{r['vd_std']},{r['z_violations']},{r['z_diversity']},{r['combined']}")
    return "\n".join(lines) + "\n"


def model_violation_breakdown(reports: list[dict]) -> list[dict]:
    """Per-model, per-constraint violation counts from same-budget campaigns."""
    if not reports:
        raise ValueError("need at least one report")
    budgets = {(r["test_limit"], r["strategy"]) for r in reports}
    if len(budgets) > 1:
        raise ValueError("reports have mismatched budgets or strategies; "
                         "counts would not be comparable")
    rows = []
    for report in reports:
        per = report["violations"]["per_constraint"]
        rows.append({
            "model": report.get("model_fixture") or report["model_path"],
            "V_PI": per["PI"], "V_CD": per["CD"], "V_IC": per["IC"], "V_AE": per["AE"],
            "unique_violations": report["violations"]["unique"],
        })
    return rows


def breakdown_csv(rows: list[dict]) -> str:
    header = "model,V_PI,V_CD,V_IC,V_AE,unique_violations"
    lines = [header]
    for r in rows:
        lines.append(f"{r['model']},{r['V_PI']},{r['V_CD']},{r['V_IC']},{r['V_AE']},"
                     f"{r['unique_violations']}")
    return "\n".join(lines) + "\n"
