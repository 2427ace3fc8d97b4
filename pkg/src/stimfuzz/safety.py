"""Biophysical safety constraints for electrode stimulation patterns.

Each constraint reduces to a dimensionless violation proportion: the
measured quantity divided by its limit.  A proportion strictly above 1 is
a violation; exactly 1 is still safe.  Two constraints are electrode-wise
(pulse feasibility, per-electrode charge) and two are aggregate (total
instantaneous current, simultaneously active electrode count).

Canonical units are Hz, ms and uA throughout; charge limits are held in
nC (1 uA x 1 ms = 1 nC).  All proportions are computed in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .runtime import StimulationPattern

ELECTRODE_CONSTRAINTS = ("PI", "CD")
AGGREGATE_CONSTRAINTS = ("IC", "AE")
CONSTRAINTS = ELECTRODE_CONSTRAINTS + AGGREGATE_CONSTRAINTS


class InvalidStimulusError(ValueError):
    """The stimulus itself is ill-formed (e.g. non-positive frequency), which
    is distinct from a safety violation."""


@dataclass(frozen=True)
class SafetyLimits:
    charge_limit_nc: float      # per-electrode charge ceiling
    current_limit_ua: float     # total instantaneous current ceiling
    active_limit: int           # max simultaneously active electrodes
    activity_epsilon_ua: float = 0.0  # amplitude above which an electrode counts as active

    def __post_init__(self):
        if self.charge_limit_nc <= 0 or self.current_limit_ua <= 0 or self.active_limit <= 0:
            raise ValueError("safety limits must be strictly positive")
        if self.activity_epsilon_ua < 0:
            raise ValueError("activity epsilon must be non-negative")


# Published device limits: epiretinal arrays (0.628 uC -> 628 nC per electrode,
# 6 mA total, 100 active) and cortical microelectrode arrays (20.4 nC,
# 3.6 mA, 30 active).
PRESETS = {
    "retinal": SafetyLimits(charge_limit_nc=628.0, current_limit_ua=6000.0, active_limit=100),
    "cortical": SafetyLimits(charge_limit_nc=20.4, current_limit_ua=3600.0, active_limit=30),
}


@dataclass(frozen=True)
class ViolationProportion:
    constraint: str
    scope: str | int            # "aggregate" or an electrode index
    proportion: float

    @property
    def violated(self) -> bool:
        return self.proportion > 1.0


def check_physically_impossible(frequency_hz: float, pulse_ms: float) -> ViolationProportion:
    """A biphasic pulse must fit within its period: 2p <= 1000/f."""
    if not np.isfinite(frequency_hz) or not np.isfinite(pulse_ms):
        raise InvalidStimulusError("non-finite frequency or pulse duration")
    if frequency_hz <= 0:
        raise InvalidStimulusError(f"frequency must be positive, got {frequency_hz}")
    proportion = 2.0 * float(pulse_ms) * float(frequency_hz) / 1000.0
    return ViolationProportion("PI", "aggregate", proportion)


def check_charge_density(pulse_ms: float, amplitude_ua: float,
                         charge_limit_nc: float) -> ViolationProportion:
    """Per-electrode charge p*a (nC) against the device charge limit."""
    if not np.isfinite(pulse_ms) or not np.isfinite(amplitude_ua):
        raise InvalidStimulusError("non-finite pulse duration or amplitude")
    charge_nc = float(pulse_ms) * float(amplitude_ua)
    return ViolationProportion("CD", "aggregate", charge_nc / float(charge_limit_nc))


def check_instantaneous_current(amplitudes_ua, current_limit_ua: float) -> ViolationProportion:
    """Total current across all electrodes against the device ceiling."""
    amps = np.asarray(amplitudes_ua, dtype=np.float64)
    if not np.isfinite(amps).all():
        raise InvalidStimulusError("non-finite amplitude")
    return ViolationProportion("IC", "aggregate", float(amps.sum() / current_limit_ua))


def check_active_electrodes(amplitudes_ua, active_limit: int,
                            activity_epsilon_ua: float = 0.0) -> ViolationProportion:
    """Count of electrodes with amplitude strictly above the activity epsilon."""
    amps = np.asarray(amplitudes_ua, dtype=np.float64)
    if not np.isfinite(amps).all():
        raise InvalidStimulusError("non-finite amplitude")
    active = int((amps > activity_epsilon_ua).sum())
    return ViolationProportion("AE", "aggregate", active / float(active_limit))


@dataclass
class ViolationReport:
    """Violation proportions for one stimulation pattern.

    ``pi`` and ``cd`` hold one proportion per electrode; ``ic`` and ``ae``
    are aggregate.  ``amplitudes_ua`` echoes the pattern's amplitudes for
    downstream diversity scoring.
    """

    pi: np.ndarray
    cd: np.ndarray
    ic: float
    ae: float
    amplitudes_ua: np.ndarray
    limits: SafetyLimits = field(repr=False, default=None)

    @property
    def electrode_count(self) -> int:
        return int(self.pi.shape[0])

    @property
    def pi_violated(self) -> np.ndarray:
        return self.pi > 1.0

    @property
    def cd_violated(self) -> np.ndarray:
        return self.cd > 1.0

    @property
    def ic_violated(self) -> bool:
        return self.ic > 1.0

    @property
    def ae_violated(self) -> bool:
        return self.ae > 1.0

    @property
    def any_violation(self) -> bool:
        return bool(self.pi_violated.any() or self.cd_violated.any()
                    or self.ic_violated or self.ae_violated)

    def constraint_flags(self) -> dict[str, bool]:
        return {
            "PI": bool(self.pi_violated.any()),
            "CD": bool(self.cd_violated.any()),
            "IC": bool(self.ic_violated),
            "AE": bool(self.ae_violated),
        }

    def per_electrode(self, constraint: str) -> list[ViolationProportion]:
        values = {"PI": self.pi, "CD": self.cd}[constraint]
        return [ViolationProportion(constraint, i, float(v)) for i, v in enumerate(values)]


def evaluate(pattern: StimulationPattern, limits: SafetyLimits) -> ViolationReport:
    """Run all four constraint checks on one pattern."""
    freq = np.asarray(pattern.frequency_hz, dtype=np.float64)
    pulse = np.asarray(pattern.pulse_ms, dtype=np.float64)
    amps = np.asarray(pattern.amplitude_ua, dtype=np.float64)
    if not (np.isfinite(freq).all() and np.isfinite(pulse).all() and np.isfinite(amps).all()):
        raise InvalidStimulusError("pattern contains non-finite values")
    if (freq <= 0).any():
        bad = int(np.argmax(freq <= 0))
        raise InvalidStimulusError(f"electrode {bad}: frequency must be positive, "
                                   f"got {freq[bad]}")
    pi = 2.0 * pulse * freq / 1000.0
    cd = pulse * amps / limits.charge_limit_nc
    ic = float(amps.sum() / limits.current_limit_ua)
    ae = int((amps > limits.activity_epsilon_ua).sum()) / float(limits.active_limit)
    return ViolationReport(pi=pi, cd=cd, ic=ic, ae=ae, amplitudes_ua=amps, limits=limits)
