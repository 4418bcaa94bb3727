"""Single command-line entry point for the whole pipeline.

Subcommands map one-to-one onto experiment stages: synthetic corpus
generation, single/multi-feature training, grouped training, evaluation,
timing benchmarks, external-method comparison, and filter-coefficient
dumps for golden tests.

Every run directory receives a provenance snapshot (arguments, seed,
input hashes) before any work starts, and contains no timestamps, so
identical invocations produce identical trees.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
The seed is taken from ``--seed``, else the ``ECGX_SEED`` environment
variable, else 42.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation, grouping, preprocess, synth, trainer
from .errors import DataError, NumericError
from .io import (
    STANDARD_LEADS,
    DatasetManifest,
    FeatureTable,
    ManifestEntry,
    read_feature_csv,
    read_manifest,
    record_loader,
    select_split,
    write_feature_csv,
    write_manifest,
    write_wfdb_record,
)

DEFAULT_SEED = 42


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("ECGX_SEED")
    return int(env) if env else DEFAULT_SEED


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_provenance(out_dir: Path, args: argparse.Namespace, seed: int,
                      inputs: dict[str, Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {
        "command": args.command,
        "seed": seed,
        "arguments": {k: str(v) for k, v in sorted(vars(args).items())
                      if k not in ("func",)},
        "input_sha256": {name: _sha256(path) for name, path in sorted(inputs.items())},
    }
    (out_dir / "provenance.json").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    return path


def _load_inputs(args) -> tuple[DatasetManifest, FeatureTable, Path]:
    manifest_path = _require(Path(args.manifest), "manifest")
    truth_path = _require(Path(args.truth), "truth CSV")
    manifest = read_manifest(manifest_path)
    truth = read_feature_csv(truth_path, id_column=args.id_column)
    return manifest, truth, manifest_path.parent


def _train_config(args, features: tuple[str, ...], seed: int) -> trainer.TrainConfig:
    filter_spec = preprocess.FilterSpec()
    leads = preprocess.lead_config(args.leads)
    target_fs = args.fs
    if getattr(args, "config", None):
        file_cfg = preprocess.config_from_file(_require(Path(args.config), "config"))
        filter_spec = file_cfg["filter"]
        if file_cfg["leads"] is not None:
            leads = file_cfg["leads"]
        if file_cfg["target_fs"] is not None:
            target_fs = file_cfg["target_fs"]
    return trainer.TrainConfig(
        target_features=features,
        lead_config=leads,
        fs=target_fs,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        early_stop_patience=args.patience,
        lr=args.lr,
        seed=seed,
        filter_spec=filter_spec,
        signal_norm=not args.no_signal_norm,
    )


# --- synth -----------------------------------------------------------------------

def cmd_synth(args) -> int:
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    records_dir = out / "records"
    _write_provenance(out, args, seed, {})

    names = synth.truth_feature_names()
    ids, rows = [], []
    snr = None if args.snr_db is not None and args.snr_db <= 0 else args.snr_db
    for i, (record, truth) in enumerate(
            synth.iter_corpus(args.n, args.fs, seed, snr_db=snr)):
        write_wfdb_record(record, records_dir)
        ids.append(record.record_id)
        rows.append([truth[name] for name in names])

    values = np.asarray(rows)
    table = FeatureTable(names, ids, values, np.ones_like(values, dtype=bool))
    write_feature_csv(table, out / "truth.csv")

    entries = tuple(
        ManifestEntry(rid, f"records/{rid}.hea", (i % 10) + 1)
        for i, rid in enumerate(ids))
    write_manifest(DatasetManifest(entries), out / "manifest.csv")
    print(f"wrote {len(ids)} records at {args.fs} Hz to {out}")
    return 0


# --- train -----------------------------------------------------------------------

def _run_one_training(manifest, signals, truth, cfg, run_dir: Path) -> float | None:
    trained = trainer.train(manifest, signals, truth, cfg)
    trainer.save_run(trained, run_dir)
    return trained.timings.get("best_val_pcc")


def cmd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    manifest, truth, base_dir = _load_inputs(args)
    out = Path(args.out)
    _write_provenance(out, args, seed,
                      {"manifest": Path(args.manifest), "truth": Path(args.truth)})
    signals = record_loader(manifest, base_dir)

    if args.per_lead:
        if len(args.features) != 1:
            raise DataError("--per-lead expects exactly one base feature")
        base = args.features[0]
        for lead in STANDARD_LEADS:
            cfg = _train_config(args, (synth.lead_feature(base, lead),), seed)
            cfg = replace(cfg, lead_config=preprocess.LeadConfig.custom([lead]))
            val = _run_one_training(manifest, signals, truth, cfg,
                                    out / f"lead_{lead}")
            print(f"lead {lead}: best val pcc "
                  f"{'n/a' if val is None or np.isnan(val) else f'{val:.4f}'}")
    else:
        cfg = _train_config(args, tuple(args.features), seed)
        val = _run_one_training(manifest, signals, truth, cfg, out)
        print(f"trained {','.join(args.features)}: best val pcc "
              f"{'n/a' if val is None or np.isnan(val) else f'{val:.4f}'}")
    return 0


# --- group-train -------------------------------------------------------------------

def _resolve_scheme(args, seed: int) -> grouping.GroupingScheme:
    kind = args.scheme
    if kind == "random-pairs":
        features = tuple(args.features or grouping.GLOBAL_FEATURES)
        return grouping.random_pairs(features, seed)
    if kind == "semantic-pairs":
        scheme = grouping.semantic_pairs()
    elif kind == "semantic-clusters":
        scheme = grouping.semantic_clusters()
    elif kind == "lead-instances":
        if not args.feature:
            raise DataError("--feature is required for lead-instances grouping")
        return grouping.lead_instance_groups(args.feature, args.group_size, seed)
    elif kind == "custom":
        if not args.scheme_file:
            raise DataError("--scheme-file is required for custom grouping")
        return grouping.load_scheme(_require(Path(args.scheme_file), "scheme file"))
    else:  # pragma: no cover - argparse restricts choices
        raise DataError(f"unknown scheme {kind!r}")
    if args.features:
        scheme = scheme.restrict(args.features)
    return scheme


def _group_worker(payload: tuple) -> tuple[int, float | None]:
    index, manifest_path, truth_path, id_column, cfg_dict, run_dir = payload
    manifest = read_manifest(manifest_path)
    truth = read_feature_csv(truth_path, id_column=id_column)
    signals = record_loader(manifest, Path(manifest_path).parent)
    cfg = trainer.TrainConfig.from_dict(cfg_dict)
    val = _run_one_training(manifest, signals, truth, cfg, Path(run_dir))
    return index, val


def cmd_group_train(args) -> int:
    seed = _resolve_seed(args.seed)
    manifest, truth, base_dir = _load_inputs(args)
    out = Path(args.out)
    _write_provenance(out, args, seed,
                      {"manifest": Path(args.manifest), "truth": Path(args.truth)})
    scheme = _resolve_scheme(args, seed)
    if not scheme.groups:
        raise DataError(f"scheme {scheme.name} has no trainable groups")
    grouping.save_scheme(scheme, out / "scheme.json")

    jobs = []
    for i, group in enumerate(scheme.groups):
        cfg = _train_config(args, group, seed)
        if scheme.kind == grouping.LEAD_INSTANCE_GROUPS:
            leads = [synth.split_lead_feature(inst)[1] for inst in group]
            cfg = replace(cfg, lead_config=preprocess.LeadConfig.custom(leads))
        run_dir = out / f"group{i:02d}"
        jobs.append((i, str(args.manifest), str(args.truth), args.id_column,
                     cfg.to_dict(), str(run_dir)))

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = dict(pool.map(_group_worker, jobs))
    else:
        signals = record_loader(manifest, base_dir)
        results = {}
        for payload in jobs:
            i = payload[0]
            cfg = trainer.TrainConfig.from_dict(payload[4])
            results[i] = _run_one_training(manifest, signals, truth, cfg,
                                           Path(payload[5]))

    for i, group in enumerate(scheme.groups):
        val = results[i]
        print(f"group {i}: {','.join(group)} best val pcc "
              f"{'n/a' if val is None or np.isnan(val) else f'{val:.4f}'}")
    return 0


# --- eval ------------------------------------------------------------------------

def _dataset_id(manifest_path: Path, truth_path: Path) -> str:
    return hashlib.sha256(
        (_sha256(manifest_path) + _sha256(truth_path)).encode()).hexdigest()[:16]


def _metadata(run_dir: Path, args, cfg: trainer.TrainConfig) -> dict[str, str]:
    return {
        "config_sha256": _sha256(run_dir / "config.json")[:16],
        "seed": str(cfg.seed),
        "dataset_id": _dataset_id(Path(args.manifest), Path(args.truth)),
    }


def _eval_single_run(run_dir: Path, manifest, truth, base_dir, args) -> int:
    trained = trainer.load_run(run_dir)
    load = record_loader(manifest, base_dir)
    test_ids = [rid for rid in select_split(manifest, args.split) if rid in truth]
    if not test_ids:
        raise DataError(f"no {args.split} records shared with the truth table")
    records = [load(rid) for rid in test_ids]
    predictions = trainer.predict(trained, records)
    if args.emit_predictions:
        write_feature_csv(predictions, Path(args.emit_predictions))

    scores = []
    for feature in trained.config.target_features:
        t_col, t_mask = truth.select_ids(test_ids).column(feature)
        p_col, _ = predictions.column(feature)
        value = evaluation.pcc_or_none(t_col, p_col, test_mask=t_mask)
        scores.append(evaluation.FeatureScore(feature, value, int(t_mask.sum())))
    report = evaluation.EvalReport(
        global_scores=tuple(scores),
        timings={},
        metadata=_metadata(run_dir, args, trained.config))
    paths = evaluation.emit_report(report, run_dir)
    for s in scores:
        print(f"{s.feature}: pcc "
              f"{'undefined' if s.pcc is None else f'{s.pcc:.4f}'} "
              f"(n={s.n_pairs})")
    print(f"report written to {paths[0].parent}")
    return 0


def _eval_lead_sweep(parent: Path, manifest, truth, base_dir, args) -> int:
    load = record_loader(manifest, base_dir)
    test_ids = [rid for rid in select_split(manifest, args.split) if rid in truth]
    records = [load(rid) for rid in test_ids]
    truth_s = truth.select_ids(test_ids)

    per_lead: dict[str, float] = {}
    feature_base = None
    n_pairs = 0
    for lead in STANDARD_LEADS:
        run_dir = parent / f"lead_{lead}"
        if not run_dir.exists():
            continue
        trained = trainer.load_run(run_dir)
        instance = trained.config.target_features[0]
        feature_base = synth.split_lead_feature(instance)[0]
        predictions = trainer.predict(trained, records)
        t_col, t_mask = truth_s.column(instance)
        p_col, _ = predictions.column(instance)
        value = evaluation.pcc_or_none(t_col, p_col, test_mask=t_mask)
        if value is not None:
            per_lead[lead] = value
            n_pairs = int(t_mask.sum())
    if not per_lead:
        raise DataError(f"no lead_* runs with defined scores under {parent}")

    score = evaluation.LeadFeatureScore(feature_base, per_lead, n_pairs)
    stats = score.stats
    report = evaluation.EvalReport(
        lead_scores=(score,),
        metadata={"seed": "mixed",
                  "dataset_id": _dataset_id(Path(args.manifest), Path(args.truth))})
    evaluation.emit_report(report, parent)
    print(f"{feature_base}: mean pcc {stats.mean:.4f} variance {stats.variance:.6f} "
          f"best lead {stats.argmax_lead}")
    return 0


def cmd_eval(args) -> int:
    manifest, truth, base_dir = _load_inputs(args)
    run_dir = _require(Path(args.run), "run directory")
    if args.lead_sweep:
        return _eval_lead_sweep(run_dir, manifest, truth, base_dir, args)
    _require(run_dir / "config.json", "run config")
    return _eval_single_run(run_dir, manifest, truth, base_dir, args)


# --- bench -----------------------------------------------------------------------

def cmd_bench(args) -> int:
    seed = _resolve_seed(args.seed)
    manifest, truth, base_dir = _load_inputs(args)
    out = Path(args.out)
    _write_provenance(out, args, seed,
                      {"manifest": Path(args.manifest), "truth": Path(args.truth)})
    signals = record_loader(manifest, base_dir)

    rows = []
    for leads_name in args.leads_list:
        for fs in args.fs_list:
            cfg = _train_config(args, tuple(args.features), seed)
            cfg = replace(cfg, lead_config=preprocess.lead_config(leads_name), fs=fs)
            report, _ = trainer.time_per_1000(manifest, signals, truth, cfg)
            rows.append((leads_name, fs, report))
            print(f"{leads_name} @{fs} Hz: train {report.train_minutes:.2f} "
                  f"min/1000, infer {report.infer_seconds:.2f} s/1000")

    with (out / "bench.csv").open("w", newline="") as fh:
        fh.write("lead_config,fs,train_min_per_1000,infer_s_per_1000,"
                 "n_train,n_test\n")
        for leads_name, fs, report in rows:
            fh.write(f"{leads_name},{fs},{report.train_minutes!r},"
                     f"{report.infer_seconds!r},{report.n_train},{report.n_test}\n")
    return 0


# --- compare -----------------------------------------------------------------------

def cmd_compare(args) -> int:
    ours = read_feature_csv(_require(Path(args.ours), "predictions CSV"),
                            id_column=args.id_column)
    external = read_feature_csv(_require(Path(args.external), "external CSV"),
                                id_column=args.id_column)
    truth = read_feature_csv(_require(Path(args.truth), "truth CSV"),
                             id_column=args.id_column)
    name_map = None
    if args.name_map:
        name_map = json.loads(_require(Path(args.name_map), "name map").read_text())
    features = args.features or [f for f in ours.feature_names
                                 if truth.has_feature(f)]
    report = evaluation.compare_external(ours, external, truth, features,
                                         name_map=name_map, top_k=args.top_k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.emit_comparison(report, out)
    for row in report.rows:
        print(f"{row.feature}: ours "
              f"{'-' if row.pcc_ours is None else f'{row.pcc_ours:.4f}'} vs external "
              f"{'-' if row.pcc_external is None else f'{row.pcc_external:.4f}'} "
              f"-> {row.winner}")
    if report.clamped:
        print(f"note: top-k {report.top_k} exceeded the "
              f"{len(report.rows)} available features")
    return 0


# --- dump-filter -------------------------------------------------------------------

def cmd_dump_filter(args) -> int:
    spec = preprocess.FilterSpec(low_cut=args.low, high_cut=args.high,
                                 order=args.order)
    sos = spec.sos(args.fs)
    doc = {
        "fs": args.fs,
        "low_cut": spec.low_cut,
        "high_cut": spec.high_cut,
        "order": spec.order,
        "zero_phase": spec.zero_phase,
        "sos": [[float(c) for c in section] for section in sos],
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# --- parser -----------------------------------------------------------------------

def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="manifest CSV "
                   "(ecg_id,path,strat_fold); signal paths are relative to it")
    p.add_argument("--truth", required=True, help="ground-truth feature CSV")
    p.add_argument("--id-column", default="ecg_id",
                   help="id column name in feature CSVs (default ecg_id)")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--leads", default="LEAD_II",
                   help="ALL12 | LEAD_II | FOUR_LEAD | SIX_LEAD | comma list "
                        "(default LEAD_II)")
    p.add_argument("--fs", type=int, default=500, choices=(100, 500),
                   help="model sampling rate; records are resampled if needed "
                        "(default 500)")
    p.add_argument("--batch-size", type=int, default=64, help="default 64")
    p.add_argument("--epochs", type=int, default=50,
                   help="maximum training epochs (default 50)")
    p.add_argument("--patience", type=int, default=5,
                   help="early-stop patience on validation pcc (default 5)")
    p.add_argument("--lr", type=float, default=1e-3,
                   help="learning rate (default 1e-3)")
    p.add_argument("--no-signal-norm", action="store_true",
                   help="skip per-lead z-scoring of input signals")
    p.add_argument("--config", help="JSON or key=value preprocessing config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecgx",
        description="Train and evaluate CNN extractors of interpretable "
                    "ECG features.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with "
                                     "known feature values")
    p.add_argument("--n", type=int, required=True, help="number of records")
    p.add_argument("--fs", type=int, default=500, choices=(100, 500),
                   help="sampling rate (default 500)")
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed (default: ECGX_SEED or 42)")
    p.add_argument("--snr-db", type=float, default=20.0,
                   help="additive noise SNR in dB; <= 0 disables noise "
                        "(default 20)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model (or 12 per-lead models)")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--features", nargs="+", required=True,
                   help="target feature column(s)")
    p.add_argument("--per-lead", action="store_true",
                   help="train 12 single-lead models of one base feature")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("group-train", help="train one model per feature group")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--scheme", required=True,
                   choices=("random-pairs", "semantic-pairs", "semantic-clusters",
                            "lead-instances", "custom"))
    p.add_argument("--features", nargs="*", default=None,
                   help="feature universe (random-pairs) or restriction filter")
    p.add_argument("--feature", help="base feature for lead-instances")
    p.add_argument("--group-size", type=int, default=2,
                   choices=(2, 3, 4, 6, 12))
    p.add_argument("--scheme-file", help="JSON scheme for --scheme custom")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel group trainings (default 1)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_group_train)

    p = sub.add_parser("eval", help="evaluate a run on a data split")
    _add_data_args(p)
    p.add_argument("--run", required=True, help="run directory (or parent of "
                   "lead_* runs with --lead-sweep)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--emit-predictions", help="also write predictions CSV here")
    p.add_argument("--lead-sweep", action="store_true",
                   help="aggregate lead_* child runs into a per-lead report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="timing per 1000 records across setups")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--fs-list", type=int, nargs="+", default=[500, 100])
    p.add_argument("--leads-list", nargs="+",
                   default=["ALL12", "LEAD_II", "FOUR_LEAD", "SIX_LEAD"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="compare predictions with an external "
                                       "method against shared ground truth")
    p.add_argument("--ours", required=True, help="our predictions CSV")
    p.add_argument("--external", required=True, help="external feature CSV")
    p.add_argument("--truth", required=True, help="ground truth CSV")
    p.add_argument("--id-column", default="ecg_id")
    p.add_argument("--features", nargs="*", default=None)
    p.add_argument("--name-map", help="JSON {our_name: external_name}")
    p.add_argument("--top-k", type=int, default=None,
                   help="keep only the K features best reproduced externally")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("dump-filter", help="emit band-pass coefficients")
    p.add_argument("--fs", type=int, required=True, choices=(100, 500))
    p.add_argument("--low", type=float, default=0.5)
    p.add_argument("--high", type=float, default=40.0)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_dump_filter)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 3
    except NumericError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
