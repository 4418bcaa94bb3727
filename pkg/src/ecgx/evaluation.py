"""Metrics and report emission.

The only accuracy metric in the pipeline is the Pearson correlation
coefficient between predicted and ground-truth feature values. It is
computed in the mean-centered two-pass form, which is algebraically equal
to the raw product-moment expression but much better conditioned; the
equivalence is enforced by tests. A correlation with zero variance on
either side is *undefined* and reported as missing, never as 0.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    IncompleteScores,
    InsufficientData,
    NoOverlap,
    UndefinedPcc,
)
from .grouping import GroupingScheme
from .io import STANDARD_LEADS, FeatureTable, lead_index
from .synth import split_lead_feature


@dataclass(frozen=True)
class PairedSeries:
    """Ground truth and predictions with incomplete pairs already dropped."""

    y_test: np.ndarray
    y_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y_test", np.asarray(self.y_test, dtype=np.float64))
        object.__setattr__(self, "y_hat", np.asarray(self.y_hat, dtype=np.float64))
        if self.y_test.shape != self.y_hat.shape or self.y_test.ndim != 1:
            raise ValueError(f"paired series must be equal-length vectors, got "
                             f"{self.y_test.shape} / {self.y_hat.shape}")
        if self.n < 2:
            raise InsufficientData(f"need at least 2 pairs, got {self.n}")

    @property
    def n(self) -> int:
        return self.y_test.size


def paired(y_test: np.ndarray, y_hat: np.ndarray,
           test_mask: np.ndarray | None = None,
           hat_mask: np.ndarray | None = None) -> PairedSeries:
    """Build a PairedSeries, dropping pairs with any missing member."""
    y_test = np.asarray(y_test, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    keep = np.ones(y_test.shape, dtype=bool)
    if test_mask is not None:
        keep &= np.asarray(test_mask, dtype=bool)
    if hat_mask is not None:
        keep &= np.asarray(hat_mask, dtype=bool)
    return PairedSeries(y_test[keep], y_hat[keep])


def pcc(series: PairedSeries) -> float:
    """Pearson correlation via the mean-centered two-pass form."""
    a = series.y_test - series.y_test.mean()
    b = series.y_hat - series.y_hat.mean()
    denom_a = float(a @ a)
    denom_b = float(b @ b)
    if denom_a == 0.0 or denom_b == 0.0:
        raise UndefinedPcc("zero variance in one of the paired vectors")
    r = float(a @ b) / math.sqrt(denom_a * denom_b)
    return min(1.0, max(-1.0, r))


def pcc_or_none(y_test, y_hat, test_mask=None, hat_mask=None) -> float | None:
    """pcc with undefined/insufficient cases reported as missing (None)."""
    try:
        return pcc(paired(y_test, y_hat, test_mask, hat_mask))
    except (UndefinedPcc, InsufficientData):
        return None


@dataclass(frozen=True)
class LeadStats:
    mean: float
    variance: float
    argmax_lead: str


def lead_stats(per_lead_pcc: Mapping[str, float]) -> LeadStats:
    """Mean, population variance, and best lead (ties: standard lead order)."""
    if not per_lead_pcc:
        raise InsufficientData("no per-lead scores")
    leads = sorted(per_lead_pcc, key=lead_index)
    scores = np.array([per_lead_pcc[l] for l in leads])
    best = leads[int(np.argmax(scores))]  # argmax returns the first maximum
    return LeadStats(float(scores.mean()), float(scores.var()), best)


def group_average_score(per_instance_pcc: Mapping[tuple[str, str], float],
                        scheme: GroupingScheme) -> dict[str, float]:
    """Two-stage average of per-instance scores.

    Stage 1: within each group, average the scores of that feature's
    instances. Stage 2: average those group-level values over every group
    containing the feature.
    """
    per_feature_group_means: dict[str, list[float]] = {}
    for group in scheme.groups:
        in_group: dict[str, list[float]] = {}
        for instance in group:
            feature, lead = split_lead_feature(instance)
            if (feature, lead) not in per_instance_pcc:
                raise IncompleteScores(f"no score for instance {instance!r}")
            in_group.setdefault(feature, []).append(per_instance_pcc[(feature, lead)])
        for feature, scores in in_group.items():
            per_feature_group_means.setdefault(feature, []).append(
                sum(scores) / len(scores))
    return {feature: sum(means) / len(means)
            for feature, means in per_feature_group_means.items()}


# --- external-method comparison -------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    feature: str
    pcc_ours: float | None
    pcc_external: float | None
    winner: str  # "ours" | "external" | "tie" | "undefined"


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]
    top_k: int | None = None
    clamped: bool = False  # True when top_k exceeded the available features


def _winner(ours: float | None, external: float | None) -> str:
    if ours is None or external is None:
        return "undefined"
    if ours > external:
        return "ours"
    if external > ours:
        return "external"
    return "tie"


def compare_external(ours: FeatureTable, external: FeatureTable,
                     truth: FeatureTable, features: Sequence[str],
                     name_map: Mapping[str, str] | None = None,
                     top_k: int | None = None) -> ComparisonReport:
    """Per-feature PCC of two methods against the same ground truth.

    ``name_map`` translates our feature names to the external table's
    column names. With ``top_k``, features are ranked by the external
    method's PCC against truth and only the best K kept (clamped when
    fewer are available).
    """
    name_map = dict(name_map or {})
    ids = [rid for rid in truth.ids if rid in ours and rid in external]
    if not ids:
        raise NoOverlap("no record ids shared between ours, external and truth")
    truth_s = truth.select_ids(ids)
    ours_s = ours.select_ids(ids)
    external_s = external.select_ids(ids)

    rows = []
    for feature in features:
        ext_name = name_map.get(feature, feature)
        t_col, t_mask = truth_s.column(feature)
        o_col, o_mask = ours_s.column(feature)
        e_col, e_mask = external_s.column(ext_name)
        p_ours = pcc_or_none(t_col, o_col, t_mask, o_mask)
        p_ext = pcc_or_none(t_col, e_col, t_mask, e_mask)
        rows.append(ComparisonRow(feature, p_ours, p_ext, _winner(p_ours, p_ext)))

    clamped = False
    if top_k is not None:
        if top_k >= len(rows):
            clamped = top_k > len(rows)
        else:
            order = sorted(rows,
                           key=lambda r: -math.inf if r.pcc_external is None
                           else r.pcc_external,
                           reverse=True)
            keep = {r.feature for r in order[:top_k]}
            rows = [r for r in rows if r.feature in keep]
    return ComparisonReport(tuple(rows), top_k, clamped)


# --- evaluation report ------------------------------------------------------------

@dataclass(frozen=True)
class FeatureScore:
    feature: str
    pcc: float | None
    n_pairs: int


@dataclass(frozen=True)
class LeadFeatureScore:
    feature: str
    per_lead_pcc: dict[str, float]
    n_pairs: int

    @property
    def stats(self) -> LeadStats:
        return lead_stats(self.per_lead_pcc)


@dataclass(frozen=True)
class EvalReport:
    global_scores: tuple[FeatureScore, ...] = ()
    lead_scores: tuple[LeadFeatureScore, ...] = ()
    timings: dict[str, float] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6g}"


def emit_report(report: EvalReport, out_dir: str | Path,
                formats: Iterable[str] = ("csv", "json"),
                stem: str = "report") -> list[Path]:
    """Write the report; emission is deterministic (byte-identical reruns)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    provenance = dict(sorted(report.metadata.items()))

    if "csv" in formats:
        path = out_dir / f"{stem}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            for key, value in provenance.items():
                fh.write(f"# {key}={value}\n")
            for key, value in sorted(report.timings.items()):
                fh.write(f"# timing:{key}={_fmt(value)}\n")
            writer = csv.writer(fh)
            if report.global_scores:
                writer.writerow(["feature", "pcc", "n_pairs"])
                for s in report.global_scores:
                    writer.writerow([s.feature, _fmt(s.pcc), s.n_pairs])
            if report.lead_scores:
                writer.writerow(["feature", "pcc", "variance", "best_lead", "n_pairs"])
                for s in report.lead_scores:
                    st = s.stats
                    writer.writerow([s.feature, _fmt(st.mean), _fmt(st.variance),
                                     st.argmax_lead, s.n_pairs])
        written.append(path)

    if "json" in formats:
        path = out_dir / f"{stem}.json"
        doc = {
            "provenance": provenance,
            "timings": {k: float(_fmt(v)) for k, v in sorted(report.timings.items())},
            "global_features": [
                {"feature": s.feature,
                 "pcc": None if s.pcc is None else float(_fmt(s.pcc)),
                 "n_pairs": s.n_pairs}
                for s in report.global_scores],
            "lead_features": [
                {"feature": s.feature,
                 "per_lead_pcc": {l: float(_fmt(v))
                                  for l, v in sorted(s.per_lead_pcc.items(),
                                                     key=lambda kv: lead_index(kv[0]))},
                 "pcc": float(_fmt(s.stats.mean)),
                 "variance": float(_fmt(s.stats.variance)),
                 "best_lead": s.stats.argmax_lead,
                 "n_pairs": s.n_pairs}
                for s in report.lead_scores],
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written


def parse_report_json(path: str | Path) -> EvalReport:
    doc = json.loads(Path(path).read_text())
    global_scores = tuple(
        FeatureScore(d["feature"], d["pcc"], d["n_pairs"])
        for d in doc.get("global_features", []))
    lead_scores = tuple(
        LeadFeatureScore(d["feature"], dict(d["per_lead_pcc"]), d["n_pairs"])
        for d in doc.get("lead_features", []))
    return EvalReport(global_scores, lead_scores,
                      dict(doc.get("timings", {})), dict(doc.get("provenance", {})))


def emit_comparison(report: ComparisonReport, out_dir: str | Path,
                    formats: Iterable[str] = ("csv", "json"),
                    stem: str = "comparison",
                    metadata: Mapping[str, str] | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        path = out_dir / f"{stem}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            for key, value in sorted((metadata or {}).items()):
                fh.write(f"# {key}={value}\n")
            writer = csv.writer(fh)
            writer.writerow(["feature", "pcc_ours", "pcc_external", "winner"])
            for r in report.rows:
                writer.writerow([r.feature, _fmt(r.pcc_ours), _fmt(r.pcc_external),
                                 r.winner])
        written.append(path)
    if "json" in formats:
        path = out_dir / f"{stem}.json"
        doc = {
            "provenance": dict(sorted((metadata or {}).items())),
            "top_k": report.top_k,
            "clamped": report.clamped,
            "features": [
                {"feature": r.feature,
                 "pcc_ours": None if r.pcc_ours is None else float(_fmt(r.pcc_ours)),
                 "pcc_external": None if r.pcc_external is None
                 else float(_fmt(r.pcc_external)),
                 "winner": r.winner}
                for r in report.rows],
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written
