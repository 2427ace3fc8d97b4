"""Request/response models for the fuzzing service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ModelSummary(BaseModel):
    path: str
    input_shape: tuple[int, int]
    layers: list[str]
    electrode_count: int
    params_per_electrode: int
    output_size: int
    fixture: str | None = None


class ForwardRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())
    model_path: str
    images: list[list[list[float]]]
    trace: bool = False
    decode: bool = True


class StimulationJSON(BaseModel):
    frequency_hz: list[float]
    pulse_ms: list[float]
    amplitude_ua: list[float]


class ForwardResponse(BaseModel):
    outputs: list[list[float]]
    stimulation: list[StimulationJSON] | None = None
    traces: list[list[list[float]]] | None = None


class LimitsJSON(BaseModel):
    preset: str | None = None
    charge_limit_nc: float | None = None
    current_limit_ua: float | None = None
    active_limit: int | None = None
    activity_epsilon_ua: float = 0.0


class CheckRequest(BaseModel):
    frequency_hz: list[float]
    pulse_ms: list[float]
    amplitude_ua: list[float]
    limits: LimitsJSON


class CheckResponse(BaseModel):
    any_violation: bool
    constraints: dict[str, bool]
    pi: list[float]
    cd: list[float]
    ic: float
    ae: float


class ProfileRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())
    model_path: str
    data_dir: str
    space: str = Field(pattern="^(outputs|neurons|features)$")
    extractor: str = "pool8"
    out_path: str | None = None


class ProfileResponse(BaseModel):
    space: str
    dimensions: int
    lo: list[float]
    hi: list[float]
    out_path: str | None = None


class CampaignRequest(BaseModel):
    config: dict
    out_dir: str
    rng_seed: int | None = None
    base_dir: str = "."


class CampaignResponse(BaseModel):
    report: dict
    out_dir: str


class CompareRequest(BaseModel):
    reports: list[dict]


class CompareResponse(BaseModel):
    rows: list[dict]
    csv: str


class BreakdownRequest(BaseModel):
    reports: list[dict]


class BreakdownResponse(BaseModel):
    rows: list[dict]
    csv: str


class FixtureRequest(BaseModel):
    name: str
    seed: int = 1
    out_path: str
    with_seeds: bool = False   # also write seed images + profiling sweep next to it


class FixtureResponse(BaseModel):
    out_path: str
    bytes_written: int
    seed_dir: str | None = None
    profile_dir: str | None = None


class ErrorRecord(BaseModel):
    error: str
    kind: str
