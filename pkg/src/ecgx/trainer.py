"""Training orchestration: dataset assembly, the CNN training loop with
early stopping on validation correlation, prediction, a closed-form linear
baseline, and wall-clock timing normalized per 1000 records.

Record pipeline (identical for training and inference):

    bandpass -> resample to cfg.fs if needed -> select leads -> z-score

Lead selection is applied first in code; all pipeline steps act per lead,
so the result is elementwise identical and filtering only touches the
leads actually used.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import EmptyDataset, NonFiniteLoss, UnknownFeature
from .evaluation import pcc_or_none
from .io import DatasetManifest, EcgRecord, FeatureTable, select_split
from .nn import (
    Adam,
    CnnModel,
    ModelConfig,
    backward,
    init_model,
    load_model,
    save_model,
)
from .preprocess import (
    LEAD_II,
    FilterSpec,
    LeadConfig,
    MinMaxScaler,
    bandpass,
    fit_scaler,
    normalize_signal,
    resample,
    select_leads,
)

SignalSource = Mapping[str, EcgRecord] | Callable[[str], EcgRecord]


@dataclass(frozen=True)
class TrainConfig:
    target_features: tuple[str, ...]
    lead_config: LeadConfig = LEAD_II
    fs: int = 500
    batch_size: int = 64
    max_epochs: int = 50
    early_stop_patience: int = 5
    lr: float = 1e-3
    seed: int = 42
    filter_spec: FilterSpec = field(default_factory=FilterSpec)
    signal_norm: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        object.__setattr__(self, "target_features", tuple(self.target_features))
        if not self.target_features:
            raise ValueError("target_features must be non-empty")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        # patience >= max_epochs is allowed: early stopping then never fires
        if self.early_stop_patience < 1:
            raise ValueError(f"early_stop_patience must be >= 1, got "
                             f"{self.early_stop_patience}")
        if self.fs not in (100, 500):
            raise ValueError(f"fs must be 100 or 500, got {self.fs}")

    def to_dict(self) -> dict:
        return {
            "target_features": list(self.target_features),
            "lead_config": {"name": self.lead_config.name,
                            "leads": list(self.lead_config.leads)},
            "fs": self.fs,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
            "lr": self.lr,
            "seed": self.seed,
            "filter": {"low_cut": self.filter_spec.low_cut,
                       "high_cut": self.filter_spec.high_cut,
                       "order": self.filter_spec.order,
                       "zero_phase": self.filter_spec.zero_phase},
            "signal_norm": self.signal_norm,
            "model": self.model.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        lc = d["lead_config"]
        return TrainConfig(
            target_features=tuple(d["target_features"]),
            lead_config=LeadConfig(lc["name"], tuple(lc["leads"])),
            fs=d["fs"],
            batch_size=d["batch_size"],
            max_epochs=d["max_epochs"],
            early_stop_patience=d["early_stop_patience"],
            lr=d["lr"],
            seed=d["seed"],
            filter_spec=FilterSpec(**d["filter"]),
            signal_norm=d["signal_norm"],
            model=ModelConfig.from_dict(d["model"]),
        )


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_pcc: float | None
    seconds: float


@dataclass
class TrainedModel:
    model: CnnModel
    scaler: MinMaxScaler
    config: TrainConfig
    log: list[EpochLog]
    timings: dict[str, float]


def _get_record(signals: SignalSource, record_id: str) -> EcgRecord:
    if isinstance(signals, Mapping):
        return signals[record_id]
    return signals(record_id)


def preprocess_record(record: EcgRecord, cfg: TrainConfig) -> np.ndarray:
    rec = select_leads(record, cfg.lead_config)
    rec = bandpass(rec, cfg.filter_spec)
    if rec.fs != cfg.fs:
        rec = resample(rec, cfg.fs)
    if cfg.signal_norm:
        rec = normalize_signal(rec)
    return rec.signal


@dataclass
class _Dataset:
    ids: list[str]
    x: np.ndarray     # (n, channels, length)
    y: np.ndarray     # (n, features), raw units
    mask: np.ndarray  # (n, features)

    def __len__(self) -> int:
        return len(self.ids)


def _assemble(ids: Sequence[str], signals: SignalSource, truth: FeatureTable,
              cfg: TrainConfig, what: str) -> _Dataset:
    kept_ids, xs, ys, masks = [], [], [], []
    for rid in ids:
        if rid not in truth:
            continue
        row, present = [], []
        for feat in cfg.target_features:
            v, ok = truth.cell(rid, feat)
            row.append(v if ok else 0.0)
            present.append(ok)
        if not any(present):
            continue  # rows with every target missing carry no signal for us
        xs.append(preprocess_record(_get_record(signals, rid), cfg))
        kept_ids.append(rid)
        ys.append(row)
        masks.append(present)
    if not kept_ids:
        raise EmptyDataset(f"no usable {what} rows for features "
                           f"{list(cfg.target_features)}")
    return _Dataset(kept_ids, np.stack(xs), np.asarray(ys, dtype=np.float64),
                    np.asarray(masks, dtype=bool))


def _check_features(truth: FeatureTable, cfg: TrainConfig) -> None:
    for feat in cfg.target_features:
        if not truth.has_feature(feat):
            raise UnknownFeature(f"feature {feat!r} not in truth table")


def _forward_in_batches(model: CnnModel, x: np.ndarray,
                        batch_size: int) -> np.ndarray:
    outs = [model.forward(x[i:i + batch_size])
            for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(outs, axis=0)


def _mean_val_pcc(pred: np.ndarray, ds: _Dataset) -> float | None:
    scores = [pcc_or_none(ds.y[:, j], pred[:, j], test_mask=ds.mask[:, j])
              for j in range(ds.y.shape[1])]
    defined = [s for s in scores if s is not None]
    return sum(defined) / len(defined) if defined else None


def train(manifest: DatasetManifest, signals: SignalSource, truth: FeatureTable,
          cfg: TrainConfig) -> TrainedModel:
    """Train one CNN on the manifest's train fold with early stopping.

    Deterministic for a fixed config: the seed fixes parameter init and
    the per-epoch shuffle, and rows whose targets are all missing are
    dropped before any random draw.
    """
    _check_features(truth, cfg)
    t_start = time.perf_counter()

    train_ds = _assemble(select_split(manifest, "train"), signals, truth, cfg, "train")
    val_ids = select_split(manifest, "val")
    try:
        val_ds = _assemble(val_ids, signals, truth, cfg, "val") if val_ids else None
    except EmptyDataset:
        val_ds = None

    scaler = fit_scaler(
        FeatureTable(cfg.target_features, train_ds.ids, train_ds.y, train_ds.mask),
        cfg.target_features)
    y_scaled = scaler.scale(train_ds.y)
    preprocess_seconds = time.perf_counter() - t_start

    n, channels, length = train_ds.x.shape
    model_cfg = replace(cfg.model, n_outputs=len(cfg.target_features))
    model = init_model(model_cfg, channels, length, cfg.seed)
    optimizer = Adam(model.params(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    log: list[EpochLog] = []
    best_val: float | None = None
    best_params: dict[str, np.ndarray] | None = None
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        t_epoch = time.perf_counter()
        order = rng.permutation(n)
        loss_sum, cell_count = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            loss, grads = backward(model, train_ds.x[idx], y_scaled[idx],
                                   train_ds.mask[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}: loss became {loss}")
            optimizer.step(grads)
            cells = int(train_ds.mask[idx].sum())
            loss_sum += loss * cells
            cell_count += cells
        train_loss = loss_sum / cell_count

        val_pcc = None
        if val_ds is not None:
            pred = scaler.unscale(
                _forward_in_batches(model, val_ds.x, cfg.batch_size))
            val_pcc = _mean_val_pcc(pred, val_ds)
        log.append(EpochLog(epoch, train_loss, val_pcc,
                            time.perf_counter() - t_epoch))

        if val_pcc is not None and (best_val is None or val_pcc > best_val):
            best_val = val_pcc
            best_params = {k: v.copy() for k, v in model.params().items()}
            stale = 0
        else:
            stale += 1
            if val_ds is not None and stale >= cfg.early_stop_patience:
                break

    if best_params is not None:
        params = model.params()
        for key, value in best_params.items():
            params[key][...] = value

    timings = {
        "train_seconds": time.perf_counter() - t_start,
        "preprocess_seconds": preprocess_seconds,
        "n_train": float(n),
        "best_val_pcc": float("nan") if best_val is None else best_val,
    }
    return TrainedModel(model, scaler, cfg, log, timings)


def predict(trained: TrainedModel, records: Sequence[EcgRecord]) -> FeatureTable:
    """Run the model on records and return unscaled predictions."""
    cfg = trained.config
    x = np.stack([preprocess_record(r, cfg) for r in records])
    raw = _forward_in_batches(trained.model, x, cfg.batch_size)
    values = trained.scaler.unscale(raw)
    mask = np.ones_like(values, dtype=bool)
    return FeatureTable(cfg.target_features, [r.record_id for r in records],
                        values, mask)


# --- linear-regression baseline -------------------------------------------------

BASELINE_DECIMATION = 10
BASELINE_RIDGE = 1e-3


@dataclass
class LinearBaseline:
    """Ridge regression from the flattened, decimated signal to each target."""

    coef: np.ndarray           # (features_in + 1, n_targets); +1 is the intercept
    scaler: MinMaxScaler
    config: TrainConfig
    log: list[EpochLog]
    timings: dict[str, float]


def _baseline_design(x: np.ndarray) -> np.ndarray:
    phi = x[:, :, ::BASELINE_DECIMATION].reshape(x.shape[0], -1)
    return np.hstack([phi, np.ones((phi.shape[0], 1))])


def linear_baseline(manifest: DatasetManifest, signals: SignalSource,
                    truth: FeatureTable, cfg: TrainConfig) -> LinearBaseline:
    _check_features(truth, cfg)
    t_start = time.perf_counter()
    train_ds = _assemble(select_split(manifest, "train"), signals, truth, cfg, "train")
    scaler = fit_scaler(
        FeatureTable(cfg.target_features, train_ds.ids, train_ds.y, train_ds.mask),
        cfg.target_features)
    y_scaled = scaler.scale(train_ds.y)

    phi = _baseline_design(train_ds.x)
    d = phi.shape[1]
    coef = np.zeros((d, len(cfg.target_features)))
    for j in range(len(cfg.target_features)):
        rows = train_ds.mask[:, j]
        if not rows.any():
            continue
        a = phi[rows]
        gram = a.T @ a + BASELINE_RIDGE * np.eye(d)
        coef[:, j] = np.linalg.solve(gram, a.T @ y_scaled[rows, j])

    timings = {"train_seconds": time.perf_counter() - t_start,
               "n_train": float(len(train_ds))}
    return LinearBaseline(coef, scaler, cfg, [], timings)


def predict_baseline(baseline: LinearBaseline,
                     records: Sequence[EcgRecord]) -> FeatureTable:
    cfg = baseline.config
    x = np.stack([preprocess_record(r, cfg) for r in records])
    values = baseline.scaler.unscale(_baseline_design(x) @ baseline.coef)
    return FeatureTable(cfg.target_features, [r.record_id for r in records],
                        values, np.ones_like(values, dtype=bool))


# --- timing -----------------------------------------------------------------------

@dataclass(frozen=True)
class TimingReport:
    train_minutes: float   # wall-clock training minutes per 1000 train records
    infer_seconds: float   # wall-clock inference seconds per 1000 records
    n_train: int
    n_test: int


def time_per_1000(manifest: DatasetManifest, signals: SignalSource,
                  truth: FeatureTable, cfg: TrainConfig
                  ) -> tuple[TimingReport, TrainedModel]:
    """Train and predict once, extrapolating wall-clock time to 1000 records."""
    trained = train(manifest, signals, truth, cfg)
    n_train = int(trained.timings["n_train"])
    train_minutes = trained.timings["train_seconds"] / 60.0 * 1000.0 / n_train

    test_records = [_get_record(signals, rid)
                    for rid in select_split(manifest, "test")]
    t0 = time.perf_counter()
    predict(trained, test_records)
    infer = time.perf_counter() - t0
    infer_seconds = infer * 1000.0 / len(test_records)
    report = TimingReport(train_minutes, infer_seconds, n_train, len(test_records))
    trained.timings["infer_seconds_per_1000"] = infer_seconds
    trained.timings["train_minutes_per_1000"] = train_minutes
    return report, trained


# --- run directory ----------------------------------------------------------------

def save_run(trained: TrainedModel, run_dir: str | Path) -> None:
    """Persist a training run: config snapshot, checkpoint, scaler, logs."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(trained.config.to_dict(), indent=2, sort_keys=True) + "\n")
    save_model(trained.model, run_dir / "model.npz")
    (run_dir / "scaler.json").write_text(
        json.dumps(trained.scaler.to_dict(), indent=2) + "\n")
    with (run_dir / "log.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_pcc", "seconds"])
        for entry in trained.log:
            writer.writerow([entry.epoch, repr(entry.train_loss),
                             "" if entry.val_pcc is None else repr(entry.val_pcc),
                             f"{entry.seconds:.3f}"])
    with (run_dir / "timings.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key in sorted(trained.timings):
            writer.writerow([key, repr(trained.timings[key])])


def load_run(run_dir: str | Path) -> TrainedModel:
    run_dir = Path(run_dir)
    cfg = TrainConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    model = load_model(run_dir / "model.npz")
    scaler = MinMaxScaler.from_dict(json.loads((run_dir / "scaler.json").read_text()))
    log = []
    with (run_dir / "log.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            log.append(EpochLog(int(row["epoch"]), float(row["train_loss"]),
                                float(row["val_pcc"]) if row["val_pcc"] else None,
                                float(row["seconds"])))
    return TrainedModel(model, scaler, cfg, log, {})
