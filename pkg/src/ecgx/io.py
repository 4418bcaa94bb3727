"""Signal and feature-table ingestion.

Covers the three on-disk artifacts the pipeline consumes:

* WFDB-subset records: a text header plus a single format-16 binary file
  (16-bit two's-complement little-endian, samples interleaved across leads).
  Only format 16 is supported; anything else is rejected loudly.
* Feature CSVs: header row, one row per record, configurable id column.
  Empty cells and literal NaN are carried as an explicit missing mask,
  never as sentinel numbers.
* Dataset manifests: ``ecg_id,path,strat_fold`` with a 10-fold split,
  defaulting to folds 1-8 train / 9 validation / 10 test.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

from .errors import (
    CorruptRecord,
    DuplicateId,
    ParseError,
    UnknownLead,
    UnsupportedFormat,
)

STANDARD_LEADS = ("I", "II", "III", "aVR", "aVL", "aVF",
                  "V1", "V2", "V3", "V4", "V5", "V6")

_LEAD_BY_KEY = {name.upper(): name for name in STANDARD_LEADS}


def canonical_lead(label: str) -> str:
    """Map a header label to its canonical lead name, case-insensitively."""
    try:
        return _LEAD_BY_KEY[label.strip().upper()]
    except KeyError:
        raise UnknownLead(f"unknown lead label {label!r}") from None


def lead_index(lead: str) -> int:
    return STANDARD_LEADS.index(canonical_lead(lead))


@dataclass(frozen=True)
class EcgRecord:
    """One multi-lead ECG: signal matrix in millivolts, row per lead."""

    record_id: str
    signal: np.ndarray          # (n_leads, n_samples) float64, mV
    fs: int
    leads: tuple[str, ...]

    def __post_init__(self):
        sig = np.asarray(self.signal, dtype=np.float64)
        object.__setattr__(self, "signal", sig)
        object.__setattr__(self, "leads", tuple(self.leads))
        if sig.ndim != 2:
            raise CorruptRecord(f"{self.record_id}: signal must be 2-D, got {sig.ndim}-D")
        if sig.shape[0] != len(self.leads):
            raise CorruptRecord(
                f"{self.record_id}: {sig.shape[0]} signal rows vs {len(self.leads)} leads")
        if self.fs <= 0:
            raise CorruptRecord(f"{self.record_id}: fs must be positive, got {self.fs}")
        if not np.isfinite(sig).all():
            raise CorruptRecord(f"{self.record_id}: non-finite samples")

    @property
    def n_leads(self) -> int:
        return self.signal.shape[0]

    @property
    def n_samples(self) -> int:
        return self.signal.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs

    def with_signal(self, signal: np.ndarray, leads: tuple[str, ...] | None = None,
                    fs: int | None = None) -> "EcgRecord":
        return EcgRecord(self.record_id, signal,
                         self.fs if fs is None else fs,
                         self.leads if leads is None else leads)


class FeatureTable:
    """Record-id-indexed table of named feature values with a missing mask.

    ``values[i, j]`` is meaningful only where ``mask[i, j]`` is True; masked
    cells hold 0.0 but must never be read as data.
    """

    def __init__(self, feature_names: Iterable[str], ids: Iterable[str],
                 values: np.ndarray, mask: np.ndarray,
                 units: Mapping[str, str] | None = None):
        self.feature_names = tuple(feature_names)
        self.ids = tuple(ids)
        self.values = np.asarray(values, dtype=np.float64)
        self.mask = np.asarray(mask, dtype=bool)
        self.units = dict(units) if units else {}
        n, f = len(self.ids), len(self.feature_names)
        if self.values.shape != (n, f) or self.mask.shape != (n, f):
            raise ValueError(f"values/mask must be ({n}, {f}), got "
                             f"{self.values.shape} / {self.mask.shape}")
        self._row_of = {}
        for i, rid in enumerate(self.ids):
            if rid in self._row_of:
                raise DuplicateId(f"duplicate record id {rid!r}")
            self._row_of[rid] = i
        self._col_of = {name: j for j, name in enumerate(self.feature_names)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._row_of

    def has_feature(self, name: str) -> bool:
        return name in self._col_of

    def row_index(self, record_id: str) -> int:
        return self._row_of[record_id]

    def column(self, feature: str) -> tuple[np.ndarray, np.ndarray]:
        """Values and mask for one feature, aligned with ``self.ids``."""
        j = self._col_of[feature]
        return self.values[:, j], self.mask[:, j]

    def cell(self, record_id: str, feature: str) -> tuple[float, bool]:
        i, j = self._row_of[record_id], self._col_of[feature]
        return float(self.values[i, j]), bool(self.mask[i, j])

    def select_features(self, names: Iterable[str]) -> "FeatureTable":
        names = list(names)
        cols = [self._col_of[n] for n in names]
        return FeatureTable(names, self.ids, self.values[:, cols], self.mask[:, cols],
                            {n: self.units[n] for n in names if n in self.units})

    def select_ids(self, ids: Iterable[str]) -> "FeatureTable":
        ids = list(ids)
        rows = [self._row_of[r] for r in ids]
        return FeatureTable(self.feature_names, ids, self.values[rows], self.mask[rows],
                            self.units)

    def sorted_by_id(self) -> "FeatureTable":
        return self.select_ids(sorted(self.ids))

    def equals(self, other: "FeatureTable") -> bool:
        """Value equality keyed by id, insensitive to row order."""
        if set(self.ids) != set(other.ids):
            return False
        if self.feature_names != other.feature_names:
            return False
        theirs = other.select_ids(self.ids)
        return (np.array_equal(self.mask, theirs.mask)
                and np.array_equal(self.values[self.mask], theirs.values[theirs.mask]))


_MISSING_TOKENS = {"", "nan"}


def read_feature_csv(path: str | Path, id_column: str = "ecg_id") -> FeatureTable:
    """Load a feature CSV; empty cells and literal NaN become missing."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if id_column not in header:
            raise ParseError(f"{path}: id column {id_column!r} not in header")
        id_col = header.index(id_column)
        feature_names = [h for i, h in enumerate(header) if i != id_col]
        feature_cols = [i for i in range(len(header)) if i != id_col]

        ids, values, mask = [], [], []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}:{row_num}: expected {len(header)} cells, "
                                 f"got {len(row)}")
            ids.append(row[id_col])
            vals = np.zeros(len(feature_cols))
            present = np.zeros(len(feature_cols), dtype=bool)
            for j, col in enumerate(feature_cols):
                cell = row[col].strip()
                if cell.lower() in _MISSING_TOKENS:
                    continue
                try:
                    vals[j] = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}:{row_num}: column {header[col]!r}: "
                        f"cannot parse {cell!r}") from None
                present[j] = True
            values.append(vals)
            mask.append(present)

    values = np.array(values) if values else np.zeros((0, len(feature_names)))
    mask = np.array(mask) if mask else np.zeros((0, len(feature_names)), dtype=bool)
    return FeatureTable(feature_names, ids, values, mask)


def write_feature_csv(table: FeatureTable, path: str | Path,
                      id_column: str = "ecg_id") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([id_column, *table.feature_names])
        for i, rid in enumerate(table.ids):
            cells = [repr(v) if m else ""
                     for v, m in zip(table.values[i], table.mask[i])]
            writer.writerow([rid, *cells])


# --- dataset manifest --------------------------------------------------------

@dataclass(frozen=True)
class SplitRule:
    train_folds: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    val_fold: int = 9
    test_fold: int = 10


@dataclass(frozen=True)
class ManifestEntry:
    record_id: str
    path: str
    fold: int


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    split_rule: SplitRule = field(default_factory=SplitRule)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.record_id in seen:
                raise DuplicateId(f"duplicate record id {e.record_id!r} in manifest")
            seen.add(e.record_id)

    def with_split(self, rule: SplitRule) -> "DatasetManifest":
        return replace(self, split_rule=rule)

    @property
    def ids(self) -> list[str]:
        return [e.record_id for e in self.entries]


def select_split(manifest: DatasetManifest, which: str) -> list[str]:
    """Record ids for one of train / val / test, in manifest order."""
    rule = manifest.split_rule
    if which == "train":
        folds = set(rule.train_folds)
    elif which == "val":
        folds = {rule.val_fold}
    elif which == "test":
        folds = {rule.test_fold}
    else:
        raise ValueError(f"split must be train/val/test, got {which!r}")
    return [e.record_id for e in manifest.entries if e.fold in folds]


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"ecg_id", "path", "strat_fold"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ParseError(f"{path}: manifest needs columns {sorted(required)}")
        entries = []
        for row in reader:
            try:
                fold = int(row["strat_fold"])
            except ValueError:
                raise ParseError(f"{path}: bad fold {row['strat_fold']!r} "
                                 f"for {row['ecg_id']!r}") from None
            entries.append(ManifestEntry(row["ecg_id"], row["path"], fold))
    return DatasetManifest(tuple(entries))


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ecg_id", "path", "strat_fold"])
        for e in manifest.entries:
            writer.writerow([e.record_id, e.path, e.fold])


def record_loader(manifest: DatasetManifest,
                  base_dir: str | Path) -> Callable[[str], EcgRecord]:
    """Loader resolving manifest paths relative to ``base_dir``, keyed by id."""
    base = Path(base_dir)
    path_of = {e.record_id: e.path for e in manifest.entries}

    def load(record_id: str) -> EcgRecord:
        return read_wfdb_record(base / path_of[record_id])

    return load


# --- WFDB subset -------------------------------------------------------------
#
# Header line 1:   name n_sig fs n_samples
# Per-signal line: file format gain(baseline)/mV adc_res adc_zero init_value
#                  checksum block label
# Only name/n_sig/fs/n_samples/format/gain/baseline/label are interpreted.

@dataclass(frozen=True)
class _SignalSpec:
    file: str
    fmt: int
    gain: float
    baseline: int
    label: str


def _parse_header(header_path: Path) -> tuple[str, int, int, int, list[_SignalSpec]]:
    lines = [ln.strip() for ln in header_path.read_text().splitlines()
             if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise CorruptRecord(f"{header_path}: empty header")
    first = lines[0].split()
    if len(first) < 4:
        raise CorruptRecord(f"{header_path}: malformed record line {lines[0]!r}")
    name, n_sig, fs, n_samples = first[0], int(first[1]), int(first[2]), int(first[3])
    if len(lines) - 1 < n_sig:
        raise CorruptRecord(f"{header_path}: {n_sig} signals declared, "
                            f"{len(lines) - 1} signal lines present")
    specs = []
    for ln in lines[1:1 + n_sig]:
        parts = ln.split()
        if len(parts) < 3:
            raise CorruptRecord(f"{header_path}: malformed signal line {ln!r}")
        file, fmt_field, gain_field = parts[0], parts[1], parts[2]
        try:
            fmt = int(fmt_field)
        except ValueError:
            raise UnsupportedFormat(
                f"{header_path}: storage format {fmt_field!r} not supported") from None
        # gain(baseline)/units; baseline and units are optional in WFDB but
        # required by this subset
        gain_part = gain_field.split("/")[0]
        if "(" in gain_part:
            gain_str, baseline_str = gain_part.rstrip(")").split("(")
            baseline = int(baseline_str)
        else:
            gain_str, baseline = gain_part, 0
        gain = float(gain_str)
        if gain <= 0:
            raise CorruptRecord(f"{header_path}: non-positive gain {gain} for {ln!r}")
        label = parts[-1]
        specs.append(_SignalSpec(file, fmt, gain, baseline, label))
    return name, n_sig, fs, n_samples, specs


def read_wfdb_record(header_path: str | Path) -> EcgRecord:
    """Read a format-16 WFDB record into physical units (millivolts)."""
    header_path = Path(header_path)
    if header_path.suffix != ".hea":
        header_path = header_path.with_suffix(".hea")
    name, n_sig, fs, n_samples, specs = _parse_header(header_path)

    for spec in specs:
        if spec.fmt != 16:
            raise UnsupportedFormat(
                f"{header_path}: format {spec.fmt} not supported (only 16)")
    dat_files = {spec.file for spec in specs}
    if len(dat_files) != 1:
        raise UnsupportedFormat(
            f"{header_path}: all signals must share one .dat file, got {dat_files}")

    dat_path = header_path.parent / specs[0].file
    raw = np.fromfile(dat_path, dtype="<i2")
    if raw.size != n_sig * n_samples:
        raise CorruptRecord(
            f"{dat_path}: expected {n_sig * n_samples} samples, found {raw.size}")
    stored = raw.reshape(n_samples, n_sig).T  # interleaved frames

    leads = tuple(canonical_lead(spec.label) for spec in specs)
    gains = np.array([spec.gain for spec in specs])[:, None]
    baselines = np.array([spec.baseline for spec in specs])[:, None]
    physical = (stored.astype(np.float64) - baselines) / gains
    return EcgRecord(name, physical, fs, leads)


def write_wfdb_record(record: EcgRecord, out_dir: str | Path,
                      gain: float = 1000.0, baseline: int = 0) -> Path:
    """Write a record as a format-16 header/.dat pair; returns the header path.

    Digitization is round(mv * gain + baseline) clipped to int16, so reading
    the pair back reproduces the stored integers exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dat_name = f"{record.record_id}.dat"
    stored = np.rint(record.signal * gain + baseline)
    stored = np.clip(stored, -32768, 32767).astype("<i2")

    lines = [f"{record.record_id} {record.n_leads} {record.fs} {record.n_samples}"]
    for lead in record.leads:
        lines.append(f"{dat_name} 16 {gain:g}({baseline})/mV 16 0 0 0 0 {lead}")
    header_path = out_dir / f"{record.record_id}.hea"
    header_path.write_text("\n".join(lines) + "\n")
    stored.T.tofile(out_dir / dat_name)  # interleave frames
    return header_path


def iter_manifest_records(manifest: DatasetManifest,
                          base_dir: str | Path) -> Iterator[EcgRecord]:
    load = record_loader(manifest, base_dir)
    for e in manifest.entries:
        yield load(e.record_id)
