"""Raw-record-to-model-input transforms.

The canonical order in the training pipeline is

    bandpass -> resample (when needed) -> select_leads -> normalize_signal

All four are per-lead, elementwise-independent operations, so filtering and
lead selection commute; callers that only need a few leads may select first
for speed without changing results.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import butter, sosfilt, sosfiltfilt

from .errors import InvalidFilter, MissingLead, UnfittedFeature, UnsupportedResample
from .io import STANDARD_LEADS, EcgRecord, FeatureTable, canonical_lead


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth band-pass realized as cascaded second-order sections."""

    low_cut: float = 0.5
    high_cut: float = 40.0
    order: int = 4
    zero_phase: bool = True

    def validate(self, fs: int) -> None:
        if self.order <= 0 or self.order % 2 != 0:
            raise InvalidFilter(f"order must be a positive even integer, got {self.order}")
        if not (0.0 < self.low_cut < self.high_cut):
            raise InvalidFilter(
                f"need 0 < low_cut < high_cut, got {self.low_cut}/{self.high_cut}")
        if self.high_cut >= fs / 2:
            raise InvalidFilter(
                f"high_cut {self.high_cut} Hz >= Nyquist {fs / 2} Hz at fs={fs}")

    def sos(self, fs: int) -> np.ndarray:
        """Second-order-section coefficients for this band at rate ``fs``."""
        self.validate(fs)
        # scipy's N is the prototype order: a band-pass of total order
        # ``order`` needs N = order / 2
        return butter(self.order // 2, [self.low_cut, self.high_cut],
                      btype="bandpass", fs=fs, output="sos")


@dataclass(frozen=True)
class LeadConfig:
    name: str
    leads: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "leads", tuple(canonical_lead(l) for l in self.leads))

    @property
    def n_leads(self) -> int:
        return len(self.leads)

    @staticmethod
    def custom(leads: Sequence[str]) -> "LeadConfig":
        return LeadConfig("CUSTOM", tuple(leads))


ALL12 = LeadConfig("ALL12", STANDARD_LEADS)
LEAD_II = LeadConfig("LEAD_II", ("II",))
FOUR_LEAD = LeadConfig("FOUR_LEAD", ("II", "aVR", "V1", "V4"))
SIX_LEAD = LeadConfig("SIX_LEAD", ("I", "II", "III", "aVF", "aVR", "aVL"))

_NAMED_LEAD_CONFIGS = {c.name: c for c in (ALL12, LEAD_II, FOUR_LEAD, SIX_LEAD)}


def lead_config(spec: str) -> LeadConfig:
    """Resolve a named configuration or a comma-separated custom lead list."""
    key = spec.strip().upper().replace("-", "_")
    if key in _NAMED_LEAD_CONFIGS:
        return _NAMED_LEAD_CONFIGS[key]
    return LeadConfig.custom([s for s in spec.split(",") if s.strip()])


EDGE_PAD_S = 1.0  # reflect padding on both ends before zero-phase filtering


def bandpass(record: EcgRecord, spec: FilterSpec = FilterSpec()) -> EcgRecord:
    """Band-pass every lead; zero-phase runs the cascade forward then backward."""
    sos = spec.sos(record.fs)
    if spec.zero_phase:
        pad = int(EDGE_PAD_S * record.fs)
        padded = np.pad(record.signal, ((0, 0), (pad, pad)), mode="reflect")
        filtered = sosfiltfilt(sos, padded, axis=-1, padlen=0)
        filtered = filtered[:, pad:pad + record.n_samples]
    else:
        filtered = sosfilt(sos, record.signal, axis=-1)
    return record.with_signal(filtered)


ANTIALIAS_CUTOFF_FRACTION = 0.45
ANTIALIAS_ORDER = 8


def resample(record: EcgRecord, target_fs: int) -> EcgRecord:
    """Integer-factor decimation behind a zero-phase anti-alias low-pass."""
    if target_fs <= 0:
        raise UnsupportedResample(f"target_fs must be positive, got {target_fs}")
    if target_fs == record.fs:
        return record
    if record.fs % target_fs != 0:
        raise UnsupportedResample(
            f"cannot resample {record.fs} Hz to {target_fs} Hz: non-integer ratio")
    k = record.fs // target_fs
    sos = butter(ANTIALIAS_ORDER, ANTIALIAS_CUTOFF_FRACTION * target_fs,
                 btype="lowpass", fs=record.fs, output="sos")
    smoothed = sosfiltfilt(sos, record.signal, axis=-1)
    n_out = record.n_samples // k
    decimated = smoothed[:, :n_out * k:k]
    return record.with_signal(np.ascontiguousarray(decimated), fs=target_fs)


def select_leads(record: EcgRecord, config: LeadConfig) -> EcgRecord:
    """Subset/reorder rows to the configured leads."""
    positions = []
    for lead in config.leads:
        if lead not in record.leads:
            raise MissingLead(f"{record.record_id}: lead {lead} not present")
        positions.append(record.leads.index(lead))
    return record.with_signal(record.signal[positions], leads=config.leads)


def normalize_signal(record: EcgRecord) -> EcgRecord:
    """Per-lead z-score; a zero-variance lead maps to all zeros."""
    mean = record.signal.mean(axis=1, keepdims=True)
    std = record.signal.std(axis=1, keepdims=True)
    out = np.where(std > 0, (record.signal - mean) / np.where(std > 0, std, 1.0), 0.0)
    return record.with_signal(out)


# --- target scaling -----------------------------------------------------------

@dataclass(frozen=True)
class MinMaxScaler:
    """Per-feature min/max learned from training targets.

    ``scale`` maps a fitted feature's training range onto [0, 1]; values
    outside the range extrapolate linearly, so ``unscale`` is an exact
    inverse everywhere. Constant features scale to 0 and unscale back to
    the constant.
    """

    feature_names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.maxs == self.mins

    def _check(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != len(self.feature_names):
            raise ValueError(f"expected last axis {len(self.feature_names)}, "
                             f"got {values.shape}")
        return values

    def scale(self, values: np.ndarray) -> np.ndarray:
        values = self._check(values)
        span = np.where(self.constant, 1.0, self.maxs - self.mins)
        out = (values - self.mins) / span
        return np.where(self.constant, 0.0, out)

    def unscale(self, values: np.ndarray) -> np.ndarray:
        values = self._check(values)
        span = np.where(self.constant, 1.0, self.maxs - self.mins)
        return np.where(self.constant, self.mins, values * span + self.mins)

    def to_dict(self) -> dict:
        return {"feature_names": list(self.feature_names),
                "mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "MinMaxScaler":
        return MinMaxScaler(tuple(d["feature_names"]),
                            np.asarray(d["mins"], dtype=np.float64),
                            np.asarray(d["maxs"], dtype=np.float64))


def fit_scaler(train_targets: FeatureTable, feature_names: Iterable[str]) -> MinMaxScaler:
    """Fit per-feature min/max from the non-missing training cells."""
    feature_names = tuple(feature_names)
    mins = np.empty(len(feature_names))
    maxs = np.empty(len(feature_names))
    for j, name in enumerate(feature_names):
        if not train_targets.has_feature(name):
            raise UnfittedFeature(f"feature {name!r} not in training targets")
        col, mask = train_targets.column(name)
        observed = col[mask]
        if observed.size == 0:
            raise UnfittedFeature(f"feature {name!r} never observed in training data")
        mins[j], maxs[j] = observed.min(), observed.max()
    return MinMaxScaler(feature_names, mins, maxs)


# --- preprocessing config file --------------------------------------------------

def config_from_file(path: str | Path) -> dict:
    """Read filter/lead/rate settings from JSON or ``key=value`` lines.

    Recognized keys: low_cut, high_cut, order, zero_phase, leads, target_fs.
    Returns {"filter": FilterSpec, "leads": LeadConfig | None, "target_fs": int | None}.
    """
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError:
        raw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()

    def _bool(v) -> bool:
        return v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")

    spec = FilterSpec(
        low_cut=float(raw.get("low_cut", FilterSpec.low_cut)),
        high_cut=float(raw.get("high_cut", FilterSpec.high_cut)),
        order=int(raw.get("order", FilterSpec.order)),
        zero_phase=_bool(raw.get("zero_phase", FilterSpec.zero_phase)),
    )
    leads = None
    if "leads" in raw:
        value = raw["leads"]
        leads = lead_config(",".join(value) if isinstance(value, list) else str(value))
    target_fs = int(raw["target_fs"]) if "target_fs" in raw else None
    return {"filter": spec, "leads": leads, "target_fs": target_fs}
