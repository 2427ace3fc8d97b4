"""FastAPI service wrapping the fuzzing engine.

The service holds a small cache of loaded models (keyed by path and mtime)
and exposes forward evaluation, constraint checking, range profiling,
campaign execution, report comparison and fixture generation.  File paths
in requests are resolved on the service host; campaign artifacts are
written server-side under the requested output directory.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..campaign import (ConfigError, breakdown_csv, compare, comparison_csv,
                        model_violation_breakdown, parse_config, run_campaign)
from ..coverage import profile
from ..features import make_extractor
from ..fixtures import FIXTURES, fixture_nef, profile_images, seed_images
from ..images import load_image_dir, save_pgm
from ..nef import ModelGraph, NEFError, load_model
from ..runtime import EvaluationError, decode_stimulation, forward, forward_traced
from ..safety import InvalidStimulusError, PRESETS, SafetyLimits, evaluate
from ..runtime import StimulationPattern
from . import schemas

app = FastAPI(title="stimfuzz", version=__version__)

_model_cache: dict[tuple[str, float], ModelGraph] = {}
_MODEL_CACHE_MAX = 8


def _get_model(path_str: str) -> ModelGraph:
    path = Path(path_str)
    if not path.is_file():
        raise HTTPException(status_code=422, detail=f"model file not found: {path}")
    key = (str(path.resolve()), path.stat().st_mtime)
    if key not in _model_cache:
        if len(_model_cache) >= _MODEL_CACHE_MAX:
            _model_cache.pop(next(iter(_model_cache)))
        try:
            _model_cache[key] = load_model(path.read_bytes())
        except NEFError as exc:
            raise HTTPException(status_code=422, detail=f"cannot load model: {exc}")
    return _model_cache[key]


def _resolve_limits(limits: schemas.LimitsJSON) -> SafetyLimits:
    if limits.preset is not None:
        if limits.preset not in PRESETS:
            raise HTTPException(status_code=422,
                                detail=f"unknown limits preset {limits.preset!r}")
        base = PRESETS[limits.preset]
        return SafetyLimits(base.charge_limit_nc, base.current_limit_ua,
                            base.active_limit, limits.activity_epsilon_ua)
    if None in (limits.charge_limit_nc, limits.current_limit_ua, limits.active_limit):
        raise HTTPException(status_code=422,
                            detail="need a preset or all three explicit limits")
    return SafetyLimits(limits.charge_limit_nc, limits.current_limit_ua,
                        limits.active_limit, limits.activity_epsilon_ua)


@app.get("/health", response_model=schemas.HealthResponse)
def health():
    return schemas.HealthResponse(status="ok", version=__version__)


@app.get("/models/summary", response_model=schemas.ModelSummary)
def model_summary(path: str):
    model = _get_model(path)
    return schemas.ModelSummary(
        path=path, input_shape=model.input_shape,
        layers=[layer.kind for layer in model.layers],
        electrode_count=model.layout.electrode_count,
        params_per_electrode=model.layout.params_per_electrode,
        output_size=model.output_size, fixture=model.metadata.get("fixture"))


@app.post("/forward", response_model=schemas.ForwardResponse)
def forward_endpoint(req: schemas.ForwardRequest):
    model = _get_model(req.model_path)
    outputs, stims, traces = [], [], []
    for image_list in req.images:
        image = np.asarray(image_list, dtype=np.float32)
        try:
            if req.trace:
                raw, trace = forward_traced(model, image)
                traces.append([layer.tolist() for layer in trace.layers])
            else:
                raw = forward(model, image)
        except EvaluationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        outputs.append([float(v) for v in raw])
        if req.decode:
            pattern = decode_stimulation(raw, model.layout)
            stims.append(schemas.StimulationJSON(
                frequency_hz=pattern.frequency_hz.tolist(),
                pulse_ms=pattern.pulse_ms.tolist(),
                amplitude_ua=pattern.amplitude_ua.tolist()))
    return schemas.ForwardResponse(outputs=outputs,
                                   stimulation=stims if req.decode else None,
                                   traces=traces if req.trace else None)


@app.post("/check", response_model=schemas.CheckResponse)
def check_endpoint(req: schemas.CheckRequest):
    limits = _resolve_limits(req.limits)
    pattern = StimulationPattern(
        frequency_hz=np.asarray(req.frequency_hz, dtype=np.float64),
        pulse_ms=np.asarray(req.pulse_ms, dtype=np.float64),
        amplitude_ua=np.asarray(req.amplitude_ua, dtype=np.float64))
    try:
        report = evaluate(pattern, limits)
    except InvalidStimulusError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    return schemas.CheckResponse(
        any_violation=report.any_violation, constraints=report.constraint_flags(),
        pi=report.pi.tolist(), cd=report.cd.tolist(), ic=report.ic, ae=report.ae)


@app.post("/profile", response_model=schemas.ProfileResponse)
def profile_endpoint(req: schemas.ProfileRequest):
    model = _get_model(req.model_path)
    try:
        dataset = load_image_dir(req.data_dir)
        extractor = make_extractor(req.extractor) if req.space == "features" else None
        stats = profile(model, dataset, req.space, extractor=extractor)
    except (ValueError, EvaluationError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    if req.out_path:
        stats.save(req.out_path)
    return schemas.ProfileResponse(space=stats.space, dimensions=stats.dimensions,
                                   lo=stats.lo.tolist(), hi=stats.hi.tolist(),
                                   out_path=req.out_path)


@app.post("/campaigns", response_model=schemas.CampaignResponse)
def campaign_endpoint(req: schemas.CampaignRequest):
    try:
        config = parse_config(req.config)
        report = run_campaign(config, req.out_dir, rng_seed=req.rng_seed,
                              base_dir=req.base_dir)
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    return schemas.CampaignResponse(report=report, out_dir=req.out_dir)


@app.post("/compare", response_model=schemas.CompareResponse)
def compare_endpoint(req: schemas.CompareRequest):
    try:
        rows = compare(req.reports)
    except (ValueError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    return schemas.CompareResponse(rows=rows, csv=comparison_csv(rows))


@app.post("/breakdown", response_model=schemas.BreakdownResponse)
def breakdown_endpoint(req: schemas.BreakdownRequest):
    try:
        rows = model_violation_breakdown(req.reports)
    except (ValueError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    return schemas.BreakdownResponse(rows=rows, csv=breakdown_csv(rows))


@app.post("/fixtures", response_model=schemas.FixtureResponse)
def fixture_endpoint(req: schemas.FixtureRequest):
    if req.name not in FIXTURES:
        raise HTTPException(status_code=422,
                            detail=f"unknown fixture {req.name!r}; "
                                   f"available: {sorted(FIXTURES)}")
    data = fixture_nef(req.name, req.seed)
    out_path = Path(req.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(data)
    seed_dir = prof_dir = None
    if req.with_seeds:
        seeds = seed_images()
        seed_dir = out_path.parent / "seeds"
        prof_dir = out_path.parent / "profile_data"
        seed_dir.mkdir(exist_ok=True)
        prof_dir.mkdir(exist_ok=True)
        for i, img in enumerate(seeds):
            save_pgm(seed_dir / f"seed{i:02d}.pgm", img)
        for i, img in enumerate(profile_images(seeds)):
            save_pgm(prof_dir / f"p{i:03d}.pgm", img)
    return schemas.FixtureResponse(out_path=str(out_path), bytes_written=len(data),
                                   seed_dir=str(seed_dir) if seed_dir else None,
                                   profile_dir=str(prof_dir) if prof_dir else None)
