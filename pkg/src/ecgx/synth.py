"""Synthetic multi-lead ECG corpus with analytically known feature values.

Each beat is a sum of five Gaussians (P, Q, R, S, T) repeated at a
per-record RR interval; per-record jitter perturbs wave amplitudes, widths
and centers. Because the waveform is parametric, every target feature has
an exact closed-form value:

* wave onsets/offsets are defined at center +/- 3 sigma,
* interval features are differences of those fiducials,
* amplitude features are the wave amplitudes scaled per lead (stated in uV).

This gives an end-to-end oracle that does not depend on any delineation
algorithm or external dataset.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .io import STANDARD_LEADS, EcgRecord, FeatureTable

DURATION_S = 10.0
RR_RANGE_MS = (600.0, 1200.0)
START_OFFSET_RANGE_S = (0.26, 0.38)
AMP_JITTER = (0.70, 1.30)
WIDTH_JITTER = (0.80, 1.20)
CENTER_JITTER = (0.90, 1.10)
NOISE_BAND_HZ = (0.5, 45.0)

WAVE_ORDER = ("P", "Q", "R", "S", "T")

GLOBAL_TRUTH_FEATURES = (
    "RR_Mean", "HR_Ventr", "P_On", "P_Off", "QRS_On", "QRS_Off",
    "T_On", "T_Off", "QRS_Dur", "PR_Int", "QT_Int",
)
LEAD_TRUTH_FEATURES = ("R_Amp", "S_Amp", "Q_Amp", "QRS_AmpPP")

TRUTH_UNITS = {
    "RR_Mean": "ms", "HR_Ventr": "bpm",
    "P_On": "ms", "P_Off": "ms", "QRS_On": "ms", "QRS_Off": "ms",
    "T_On": "ms", "T_Off": "ms", "QRS_Dur": "ms", "PR_Int": "ms",
    "QT_Int": "ms",
    "R_Amp": "uV", "S_Amp": "uV", "Q_Amp": "uV", "QRS_AmpPP": "uV",
}

# Fixed per-lead amplitude scaling: lead II carries the reference waveform,
# every other lead a scaled copy, so lead informativeness differs but no
# lead is silent.
LEAD_SCALES = {
    "I": 0.75, "II": 1.00, "III": 0.55,
    "aVR": 0.85, "aVL": 0.45, "aVF": 0.70,
    "V1": 0.50, "V2": 0.80, "V3": 0.90,
    "V4": 0.95, "V5": 0.85, "V6": 0.65,
}


def lead_feature(feature: str, lead: str) -> str:
    """Column name of one per-lead instance, e.g. R_Amp_II."""
    return f"{feature}_{lead}"


def split_lead_feature(name: str) -> tuple[str, str]:
    feature, _, lead = name.rpartition("_")
    return feature, lead


def truth_feature_names() -> list[str]:
    names = list(GLOBAL_TRUTH_FEATURES)
    for feat in LEAD_TRUTH_FEATURES:
        names.extend(lead_feature(feat, lead) for lead in STANDARD_LEADS)
    return names


@dataclass(frozen=True)
class Wave:
    amplitude_mv: float
    center_s: float   # relative to the R peak
    width_s: float    # Gaussian sigma


@dataclass(frozen=True)
class BeatTemplate:
    """Gaussian parameters of one beat plus the per-lead scaling vector."""

    p: Wave
    q: Wave
    r: Wave
    s: Wave
    t: Wave
    lead_scales: tuple[float, ...] = tuple(LEAD_SCALES[l] for l in STANDARD_LEADS)

    def __post_init__(self):
        centers = [w.center_s for w in self.waves()]
        if any(w.width_s <= 0 for w in self.waves()):
            raise ValueError("wave widths must be positive")
        if sorted(centers) != centers or len(set(centers)) != len(centers):
            raise ValueError(f"wave centers must be strictly ordered, got {centers}")
        if self.r.amplitude_mv <= 0:
            raise ValueError("R amplitude must be positive")

    def waves(self) -> tuple[Wave, ...]:
        return (self.p, self.q, self.r, self.s, self.t)


DEFAULT_TEMPLATE = BeatTemplate(
    p=Wave(0.15, -0.170, 0.015),
    q=Wave(-0.10, -0.028, 0.006),
    r=Wave(1.20, 0.000, 0.009),
    s=Wave(-0.25, 0.030, 0.007),
    t=Wave(0.35, 0.250, 0.030),
)


def _jittered_template(rng: np.random.Generator) -> BeatTemplate:
    waves = []
    for base in DEFAULT_TEMPLATE.waves():
        amp = base.amplitude_mv * rng.uniform(*AMP_JITTER)
        width = base.width_s * rng.uniform(*WIDTH_JITTER)
        center = base.center_s * rng.uniform(*CENTER_JITTER)
        waves.append(Wave(amp, center, width))
    return BeatTemplate(*waves)


def truth_from_template(template: BeatTemplate, rr_ms: float,
                        first_r_s: float) -> dict[str, float]:
    """Closed-form feature values for a record built from ``template``.

    Timing fiducials are in ms from record start and refer to the first
    beat; onset/offset of a wave sit at center -/+ 3 sigma.
    """
    p, q, _, s, t = template.waves()

    def onset(w: Wave) -> float:
        return (first_r_s + w.center_s - 3.0 * w.width_s) * 1000.0

    def offset(w: Wave) -> float:
        return (first_r_s + w.center_s + 3.0 * w.width_s) * 1000.0

    truth = {
        "RR_Mean": rr_ms,
        "HR_Ventr": 60000.0 / rr_ms,
        "P_On": onset(p),
        "P_Off": offset(p),
        "QRS_On": onset(q),
        "QRS_Off": offset(s),
        "T_On": onset(t),
        "T_Off": offset(t),
    }
    truth["QRS_Dur"] = truth["QRS_Off"] - truth["QRS_On"]
    truth["PR_Int"] = truth["QRS_On"] - truth["P_On"]
    truth["QT_Int"] = truth["T_Off"] - truth["QRS_On"]

    r_uv = template.r.amplitude_mv * 1000.0
    s_uv = template.s.amplitude_mv * 1000.0
    q_uv = template.q.amplitude_mv * 1000.0
    pp_uv = r_uv - min(q_uv, s_uv)
    for lead, scale in zip(STANDARD_LEADS, template.lead_scales):
        truth[lead_feature("R_Amp", lead)] = r_uv * scale
        truth[lead_feature("S_Amp", lead)] = s_uv * scale
        truth[lead_feature("Q_Amp", lead)] = q_uv * scale
        truth[lead_feature("QRS_AmpPP", lead)] = pp_uv * scale
    return truth


def _render_reference(template: BeatTemplate, rr_s: float, first_r_s: float,
                      fs: int, n: int) -> np.ndarray:
    """Unit-scale (lead II) waveform: Gaussian sums over all visible beats."""
    t = np.arange(n) / fs
    x = np.zeros(n)
    # one beat before the record start so its T wave fills the left edge
    k = -1
    while (r_time := first_r_s + k * rr_s) < DURATION_S + 0.4:
        for wave in template.waves():
            center = r_time + wave.center_s
            lo = max(0, int((center - 5 * wave.width_s) * fs))
            hi = min(n, int(math.ceil((center + 5 * wave.width_s) * fs)) + 1)
            if lo < hi:
                seg = t[lo:hi] - center
                x[lo:hi] += wave.amplitude_mv * np.exp(-0.5 * (seg / wave.width_s) ** 2)
        k += 1
    return x


def _band_limited_noise(rng: np.random.Generator, shape: tuple[int, int],
                        fs: int) -> np.ndarray:
    white = rng.standard_normal(shape)
    low, high = NOISE_BAND_HZ
    sos = butter(2, [low, high], btype="bandpass", fs=fs, output="sos")
    return sosfiltfilt(sos, white, axis=-1)


def render_record(record_id: str, template: BeatTemplate, rr_ms: float,
                  first_r_s: float, fs: int, rng: np.random.Generator,
                  snr_db: float | None = 20.0) -> EcgRecord:
    n = int(round(DURATION_S * fs))
    reference = _render_reference(template, rr_ms / 1000.0, first_r_s, fs, n)
    scales = np.asarray(template.lead_scales)[:, None]
    signal = scales * reference[None, :]

    if snr_db is not None:
        noise = _band_limited_noise(rng, signal.shape, fs)
        signal_rms = np.sqrt(np.mean(signal ** 2, axis=1, keepdims=True))
        noise_rms = np.sqrt(np.mean(noise ** 2, axis=1, keepdims=True))
        target = signal_rms * 10.0 ** (-snr_db / 20.0)
        signal = signal + noise * (target / noise_rms)

    return EcgRecord(record_id, signal, fs, STANDARD_LEADS)


def iter_corpus(n_records: int, fs: int, seed: int,
                snr_db: float | None = 20.0
                ) -> Iterator[tuple[EcgRecord, dict[str, float]]]:
    """Yield (record, truth row) pairs one at a time; see generate_corpus."""
    if n_records < 1:
        raise ValueError(f"n_records must be >= 1, got {n_records}")
    if fs not in (100, 500):
        raise ValueError(f"fs must be 100 or 500, got {fs}")
    rng = np.random.default_rng(seed)
    width = len(str(n_records - 1))
    for i in range(n_records):
        rr_ms = rng.uniform(*RR_RANGE_MS)
        first_r_s = rng.uniform(*START_OFFSET_RANGE_S)
        template = _jittered_template(rng)
        record_id = f"synth{i:0{width}d}"
        record = render_record(record_id, template, rr_ms, first_r_s, fs, rng, snr_db)
        yield record, truth_from_template(template, rr_ms, first_r_s)


def generate_corpus(n_records: int, fs: int, seed: int,
                    snr_db: float | None = 20.0
                    ) -> tuple[list[EcgRecord], FeatureTable]:
    """Fully reproducible corpus: same (n_records, fs, seed) -> same bits."""
    records, ids, rows = [], [], []
    names = truth_feature_names()
    for record, truth in iter_corpus(n_records, fs, seed, snr_db):
        records.append(record)
        ids.append(record.record_id)
        rows.append([truth[name] for name in names])
    values = np.asarray(rows)
    mask = np.ones_like(values, dtype=bool)
    units = {}
    for name in names:
        base = name if name in TRUTH_UNITS else split_lead_feature(name)[0]
        units[name] = TRUTH_UNITS[base]
    return records, FeatureTable(names, ids, values, mask, units)
