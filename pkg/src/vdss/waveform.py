"""Synthetic ventilator waveforms and deterministic cue extraction.

The generator renders pressure/flow traces for a configurable scenario
(clean breathing, expiratory sawtooth oscillation, scooped inspiratory
plateau, additive noise at a target SNR, dropped samples). The extractor
inverts it: sawtooth is detected by counting amplitude-gated zero
crossings of band-filtered expiratory flow, a scooped plateau by the mean
curvature of the breath-averaged inspiratory plateau, and
quality/uncertainty from the missing-sample ratio and residual noise.

Detection thresholds were frozen from a sweep of generator scenarios over
seeds and SNR levels down to 0 dB (see tests for the sweep coverage).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .contracts import WaveformCues, WaveformSegment

SAWTOOTH_OSC_HZ = 8.0

# Detector calibration (frozen from the generator sweep).
_SAW_BAND_HZ = (4.0, 12.0)
_SAW_MIN_CROSSING_RATE = 3.0     # gated crossings per second of expiration interior
_SAW_MIN_BAND_RATIO = 1.6        # expiratory vs inspiratory interior band rms
_SAW_GATE_FLOOR = 1.5
_SAW_GATE_NOISE_MULT = 2.5
_SCOOP_CURVATURE_THRESHOLD = -30.0
_EDGE_GUARD_S = 0.3
_GOOD_MISSING_RATIO = 0.05
_UNUSABLE_MISSING_RATIO = 0.30


@dataclass(frozen=True)
class WaveformScenario:
    """Knobs for one synthetic segment; defaults give a clean adult pattern."""

    sawtooth: bool = False
    scooped: bool = False
    snr_db: float | None = None
    missing_ratio: float = 0.0
    n_breaths: int = 6
    resp_rate: float = 20.0
    peep: float = 8.0
    plateau_pressure: float = 26.0
    peak_flow: float = 55.0
    sample_rate_hz: float = 50.0

    def expected_patterns(self) -> tuple:
        patterns = []
        if self.sawtooth:
            patterns.append("sawtooth")
        if self.scooped:
            patterns.append("scooped_plateau")
        return tuple(patterns) if patterns else ("none",)


def generate_segment(scenario: WaveformScenario, seed: int = 0) -> WaveformSegment:
    """Render one synthetic pressure/flow segment for the scenario."""
    sr = scenario.sample_rate_hz
    breath_period = 60.0 / scenario.resp_rate
    n_per_breath = int(round(breath_period * sr))
    t_breath = np.arange(n_per_breath) / sr
    insp_frac = 1.0 / 3.0
    t_insp = breath_period * insp_frac

    pressure_b = np.empty(n_per_breath)
    flow_b = np.empty(n_per_breath)
    for i, t in enumerate(t_breath):
        if t < t_insp:
            tau = t / t_insp
            rise = min(1.0, tau / 0.15)
            p = scenario.peep + (scenario.plateau_pressure - scenario.peep) * rise
            if scenario.scooped and tau >= 0.2:
                # Mid-inspiratory sag: flow starvation dips the plateau.
                scoop_tau = (tau - 0.2) / 0.8
                p -= 4.0 * np.sin(np.pi * scoop_tau) ** 2
            pressure_b[i] = p
            flow_b[i] = scenario.peak_flow * min(1.0, tau / 0.1) * (1.0 - 0.25 * tau)
        else:
            tau = (t - t_insp) / (breath_period - t_insp)
            pressure_b[i] = scenario.peep + (scenario.plateau_pressure - scenario.peep) * np.exp(-8.0 * tau)
            flow_b[i] = -1.1 * scenario.peak_flow * np.exp(-4.0 * tau)
            if scenario.sawtooth:
                flow_b[i] += 6.0 * sps.sawtooth(2 * np.pi * SAWTOOTH_OSC_HZ * (t - t_insp), width=0.5)

    pressure = np.tile(pressure_b, scenario.n_breaths)
    flow = np.tile(flow_b, scenario.n_breaths)

    rng = np.random.default_rng(seed)
    if scenario.snr_db is not None:
        for series in (pressure, flow):
            sig_rms = float(np.sqrt(np.mean((series - series.mean()) ** 2)))
            noise_rms = sig_rms * 10.0 ** (-scenario.snr_db / 20.0)
            series += rng.normal(0.0, noise_rms, series.shape)
    if scenario.missing_ratio > 0:
        n = len(pressure)
        n_missing = int(round(scenario.missing_ratio * n))
        if n_missing:
            idx = rng.choice(n, size=n_missing, replace=False)
            pressure[idx] = np.nan
            flow[idx] = np.nan

    return WaveformSegment(sample_rate_hz=sr, pressure=tuple(pressure.tolist()),
                           flow=tuple(flow.tolist()))


def _interpolate_missing(x: np.ndarray) -> np.ndarray:
    missing = ~np.isfinite(x)
    if not missing.any():
        return x
    out = x.copy()
    idx = np.arange(len(x))
    out[missing] = np.interp(idx[missing], idx[~missing], x[~missing])
    return out


def _smooth(x: np.ndarray, sr: float, seconds: float) -> np.ndarray:
    window = max(3, int(round(sr * seconds)))
    return np.convolve(x, np.ones(window) / window, mode="same")


def _noise_ratio(x: np.ndarray, sr: float) -> float:
    """Residual high-frequency power relative to total, as rms fraction in [0, 1]."""
    smooth = _smooth(x, sr, 0.12)
    resid = x - smooth
    resid_rms = float(np.sqrt(np.mean(resid**2)))
    smooth_rms = float(np.sqrt(np.mean((smooth - smooth.mean()) ** 2)))
    if resid_rms + smooth_rms == 0:
        return 0.0
    return resid_rms / (resid_rms + smooth_rms)


def _breath_starts(pressure: np.ndarray, sr: float) -> np.ndarray:
    """Inspiration onsets: upward mid-level crossings of heavily smoothed pressure."""
    smooth = _smooth(pressure, sr, 0.3)
    lo, hi = np.percentile(smooth, [10, 90])
    mid = (lo + hi) / 2.0
    above = smooth > mid
    crossings = np.flatnonzero(~above[:-1] & above[1:]) + 1
    min_gap = int(sr * 0.8)  # breaths faster than 75/min are not plausible here
    kept: list = []
    for c in crossings:
        if not kept or c - kept[-1] >= min_gap:
            kept.append(c)
    return np.asarray(kept, dtype=int)


def _phase_masks(flow: np.ndarray, sr: float) -> tuple:
    """(expiration, inspiration) interior masks, guarded away from transitions."""
    sign = _smooth(flow, sr, 0.15) < 0
    change = np.flatnonzero(sign[1:] != sign[:-1]) + 1
    guard = int(_EDGE_GUARD_S * sr)
    interior = np.ones(len(flow), dtype=bool)
    for c in change:
        interior[max(0, c - guard):c + guard] = False
    return sign & interior, (~sign) & interior


def _sawtooth_stats(flow: np.ndarray, sr: float) -> tuple:
    """(gated crossing rate over expiration interior, expiratory/inspiratory band rms ratio)."""
    exp_mask, insp_mask = _phase_masks(flow, sr)
    if exp_mask.sum() < sr or insp_mask.sum() < sr // 2:
        return 0.0, 0.0
    nyquist = sr / 2.0
    b, a = sps.butter(2, [_SAW_BAND_HZ[0] / nyquist, _SAW_BAND_HZ[1] / nyquist], btype="bandpass")
    filtered = sps.filtfilt(b, a, flow)
    exp_rms = float(np.sqrt(np.mean(filtered[exp_mask] ** 2)))
    insp_rms = float(np.sqrt(np.mean(filtered[insp_mask] ** 2)))
    ratio = exp_rms / max(insp_rms, 1e-9)
    gate = max(_SAW_GATE_FLOOR, _SAW_GATE_NOISE_MULT * insp_rms)
    level = 0
    flips = 0
    for value, in_exp in zip(filtered, exp_mask):
        if not in_exp:
            continue
        if value > gate and level <= 0:
            if level < 0:
                flips += 1
            level = 1
        elif value < -gate and level >= 0:
            if level > 0:
                flips += 1
            level = -1
    rate = flips / (exp_mask.sum() / sr)
    return rate, ratio


def _plateau_curvature(pressure: np.ndarray, starts: np.ndarray, sr: float) -> float:
    """Signed curvature of the breath-averaged inspiratory plateau.

    Breaths are folded at the median period and averaged before the
    quadratic fit, so noise cancels coherently. The sign is flipped so a
    mid-plateau dip (flow-starvation scoop) reports negative curvature.
    """
    if len(starts) < 2:
        return 0.0
    diffs = np.diff(starts)
    period = int(np.median(diffs)) if len(diffs) > 1 else int(diffs[0])
    folds = [pressure[s:s + period] for s in starts if s + period <= len(pressure)]
    if not folds:
        return 0.0
    averaged = _smooth(np.mean(folds, axis=0), sr, 0.12)
    lo, hi = np.percentile(averaged, [10, 90])
    threshold = lo + 0.8 * (hi - lo)
    idx = np.flatnonzero(averaged > threshold)
    if len(idx) < 6:
        return 0.0
    core = averaged[idx[0]:idx[-1] + 1]
    trim = max(1, len(core) // 6)
    if len(core) > 2 * trim + 5:
        core = core[trim:-trim]
    t = np.arange(len(core)) / sr
    coeffs = np.polyfit(t, core, 2)
    return float(-2.0 * coeffs[0])


def extract_cues(segment: WaveformSegment) -> WaveformCues:
    """Deterministic structured cues from one pressure/flow segment."""
    pressure = np.asarray(segment.pressure, dtype=float)
    flow = np.asarray(segment.flow, dtype=float)
    if len(pressure) == 0 or len(flow) == 0:
        return WaveformCues(quality="unusable", asynchrony_patterns=("none",),
                            suspicious_events=(), observed_state="empty segment",
                            uncertainty=1.0)

    missing_ratio = float(np.mean(~np.isfinite(pressure) | ~np.isfinite(flow)))
    if missing_ratio >= _UNUSABLE_MISSING_RATIO:
        return WaveformCues(quality="unusable", asynchrony_patterns=("none",),
                            suspicious_events=("excessive missing samples",),
                            observed_state="unusable trace", uncertainty=1.0)

    pressure = _interpolate_missing(pressure)
    flow = _interpolate_missing(flow)
    sr = segment.sample_rate_hz

    starts = _breath_starts(pressure, sr)
    if len(starts) < 2:
        return WaveformCues(quality="unusable", asynchrony_patterns=("none",),
                            suspicious_events=("fewer than two breaths",),
                            observed_state="segment too short", uncertainty=1.0)

    noise = max(_noise_ratio(pressure, sr), _noise_ratio(flow, sr))
    uncertainty = float(np.clip(max(1.3 * noise, 2.0 * missing_ratio), 0.0, 1.0))
    quality = "good" if (missing_ratio < _GOOD_MISSING_RATIO and noise < 0.2) else "degraded"

    patterns = []
    events = []
    crossing_rate, band_ratio = _sawtooth_stats(flow, sr)
    if crossing_rate >= _SAW_MIN_CROSSING_RATE and band_ratio >= _SAW_MIN_BAND_RATIO:
        patterns.append("sawtooth")
        events.append(f"expiratory oscillation at {crossing_rate:.1f} gated crossings/s")
    curvature = _plateau_curvature(pressure, starts, sr)
    if curvature < _SCOOP_CURVATURE_THRESHOLD:
        patterns.append("scooped_plateau")
        events.append(f"inspiratory plateau curvature {curvature:.1f}")

    if not patterns:
        patterns = ["none"]
        observed = "regular breaths, no asynchrony pattern"
    else:
        observed = "asynchrony pattern(s): " + ", ".join(patterns)

    return WaveformCues(quality=quality, asynchrony_patterns=tuple(sorted(patterns)),
                        suspicious_events=tuple(events), observed_state=observed,
                        uncertainty=uncertainty)
