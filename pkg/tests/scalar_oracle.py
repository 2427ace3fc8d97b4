"""Independent scalar reimplementation of the safety checks.

Written against the constraint definitions directly, in plain Python
arithmetic with no numpy, and kept deliberately separate from the package
so the two implementations can be cross-checked.
"""


def pi_proportion(frequency_hz, pulse_ms):
    # pulse must fit its period: 2p vs 1000/f, as a ratio
    period_ms = 1000.0 / frequency_hz
    return (2.0 * pulse_ms) / period_ms


def cd_proportion(pulse_ms, amplitude_ua, charge_limit_nc):
    return (pulse_ms * amplitude_ua) / charge_limit_nc


def ic_proportion(amplitudes_ua, current_limit_ua):
    total = 0.0
    for a in amplitudes_ua:
        total += a
    return total / current_limit_ua


def ae_proportion(amplitudes_ua, active_limit, epsilon=0.0):
    active = 0
    for a in amplitudes_ua:
        if a > epsilon:
            active += 1
    return active / active_limit


def full_report(freqs, pulses, amps, charge_limit_nc, current_limit_ua, active_limit,
                epsilon=0.0):
    """Per-electrode PI/CD proportions, aggregate IC/AE, and violation flags."""
    pi = [pi_proportion(f, p) for f, p in zip(freqs, pulses)]
    cd = [cd_proportion(p, a, charge_limit_nc) for p, a in zip(pulses, amps)]
    ic = ic_proportion(amps, current_limit_ua)
    ae = ae_proportion(amps, active_limit, epsilon)
    flags = {
        "PI": any(v > 1.0 for v in pi),
        "CD": any(v > 1.0 for v in cd),
        "IC": ic > 1.0,
        "AE": ae > 1.0,
    }
    return {"pi": pi, "cd": cd, "ic": ic, "ae": ae, "flags": flags,
            "any": any(flags.values())}
