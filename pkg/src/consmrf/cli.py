"""Command-line surface: ingest, train, evaluate, rho sweeps, core benchmarks.

Every run writes its resolved configuration, the seed, and a version stamp
into the output directory; with a fixed seed and one worker, reruns reproduce
artifacts byte-for-byte. Wall-clock measurements are opt-in (`--timings`)
because measured time is the one thing a rerun cannot reproduce.

Exit codes: 0 success, 2 usage, 3 data problems (missing/parse/empty/split),
4 divergence, 5 negative-sampler saturation.
"""
from __future__ import annotations

import csv
import functools
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .baselines import train_cd, train_dmf
from .checkpoints import load_checkpoint, save_checkpoint
from .dataset import (is_cache_file, load_cache, make_folds, parse_triples,
                      save_cache, split_dataset, write_stats_csv)
from .errors import (EXIT_DATA, EXIT_DIVERGENCE, EXIT_SATURATION, ConsmrfError,
                     DivergenceError, EmptyDatasetError, ParseError,
                     SaturationError, SplitRejectionError)
from .evaluate import aggregate_fold_reports, evaluate_model
from .factors import Hyperparams, WeightShape
from .rng import derive_seed
from .synthetic import synthetic_dataset
from .trainer import train_consmrf

_TRAINERS = {"consmrf": train_consmrf, "cd": train_cd, "dmf": train_dmf}


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ParseError, EmptyDatasetError, SplitRejectionError) as err:
            _fail(err, EXIT_DATA)
        except FileNotFoundError as err:
            _fail(err, EXIT_DATA)
        except DivergenceError as err:
            _fail(err, EXIT_DIVERGENCE)
        except SaturationError as err:
            _fail(err, EXIT_SATURATION)
    return wrapper


def _fail(err, code):
    click.echo(f"error: {err}", err=True)
    sys.exit(code)


def _out_dir(out, subcommand: str) -> Path:
    if out is None:
        out = Path(os.environ.get("CONSMRF_OUT", "runs")) / subcommand
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, subcommand: str, options: dict) -> None:
    config = {"subcommand": subcommand, "version": __version__, **options}
    with open(out / "config.json", "w", encoding="utf-8") as handle:
        json.dump(config, handle, indent=2, sort_keys=True, default=str)
        handle.write("\n")


def _hyperparam_options(fn):
    opts = [
        click.option("--k", type=int, default=10, show_default=True,
                     help="Latent dimension."),
        click.option("--lambda", "lam", type=float, default=0.005, show_default=True,
                     help="L2 regularization weight."),
        click.option("--eta", type=float, default=0.5, show_default=True,
                     help="Base ADAGRAD step size."),
        click.option("--rho", type=float, default=0.0005, show_default=True,
                     help="Consensus penalty (also the dual step size)."),
        click.option("--sigma-init", type=float, default=0.1, show_default=True,
                     help="Stddev of the Gaussian parameter initialization."),
        click.option("--epsilon", type=float, default=1e-4, show_default=True,
                     help="Early-stopping threshold on the summed loss delta."),
        click.option("--inner-budget", type=int, default=None,
                     help="SGD samples per relation per round (default: relation size)."),
        click.option("--max-rounds", type=int, default=200, show_default=True),
        click.option("--m-neg", type=int, default=100, show_default=True,
                     help="Sampled negatives per evaluation unit."),
        click.option("--top-k", type=int, default=5, show_default=True),
        click.option("--alpha", type=float, default=0.25, show_default=True,
                     help="Auxiliary-relation weight for the decoupled baseline."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--reset-consensus/--no-reset-consensus", "reset_to_consensus",
                     default=True, show_default=True,
                     help="Reset entity factors to the consensus each round."),
        click.option("--reset-adagrad/--no-reset-adagrad",
                     "reset_adagrad_with_consensus", default=True, show_default=True,
                     help="Reset entity-side ADAGRAD history with the consensus reset."),
        click.option("--dmf-budget-factor", type=int, default=None,
                     help="Per-target budget factor for dmf (default: relation count)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _data_options(fn):
    opts = [
        click.option("--data", type=click.Path(path_type=Path), default=None,
                     help="Triple TSV or dataset cache."),
        click.option("--synthetic", is_flag=True, default=False,
                     help="Generate the planted-factor dataset in-process."),
        click.option("--syn-entities", type=int, default=1000, show_default=True),
        click.option("--syn-relations", type=int, default=10, show_default=True),
        click.option("--syn-k", type=int, default=8, show_default=True),
        click.option("--syn-positives", type=int, default=20, show_default=True),
        click.option("--syn-seed", type=int, default=0, show_default=True),
        click.option("--test-frac", type=float, default=0.1, show_default=True),
        click.option("--valid-frac", type=float, default=0.1, show_default=True),
        click.option("--stratified", is_flag=True, default=False,
                     help="Apply the split fractions per relation instead of globally."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _load_dataset(options: dict):
    if options["synthetic"]:
        return synthetic_dataset(options["syn_entities"], options["syn_relations"],
                                 options["syn_k"], options["syn_positives"],
                                 options["syn_seed"])
    data = options["data"]
    if data is None:
        raise click.UsageError("either --data or --synthetic is required")
    if not Path(data).exists():
        raise FileNotFoundError(f"no such data file: {data}")
    if is_cache_file(data):
        return load_cache(data)
    return parse_triples(data)


def _hp_from_options(options: dict) -> Hyperparams:
    names = ("k", "lam", "eta", "rho", "sigma_init", "epsilon", "inner_budget",
             "max_rounds", "m_neg", "top_k", "alpha", "seed",
             "reset_to_consensus", "reset_adagrad_with_consensus",
             "dmf_budget_factor")
    return Hyperparams(**{name: options[name] for name in names})


def _split_options(options: dict) -> dict:
    return {key: options[key] for key in ("test_frac", "valid_frac", "stratified")}


def _data_description(options: dict) -> dict:
    if options["synthetic"]:
        return {"source": "synthetic",
                "entities": options["syn_entities"],
                "relations": options["syn_relations"],
                "k": options["syn_k"],
                "positives": options["syn_positives"],
                "seed": options["syn_seed"]}
    return {"source": str(options["data"])}


def _write_curve_csv(path: Path, curve, timed: bool) -> None:
    with open(path, "w", newline="", encoding="utf-8") as out:
        writer = csv.writer(out)
        writer.writerow(["round", "seconds", "train_loss", "valid_auc"])
        for row in curve:
            seconds = row.seconds if timed else 0.0
            valid = "" if row.valid_auc is None else row.valid_auc
            writer.writerow([row.round, seconds, row.train_loss, valid])


@click.group()
@click.version_option(version=__version__, prog_name="consmrf")
def main():
    """Multi-relational factorization: consensus trainer, baselines, evaluation."""


@main.command()
@click.option("--data", type=click.Path(path_type=Path), required=True,
              help="Triple TSV (subject<TAB>relation<TAB>object).")
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Output directory (default: $CONSMRF_OUT or ./runs).")
@_guarded
def ingest(data, out):
    """Parse a triple file into a dataset cache plus a stats summary."""
    out = _out_dir(out, "ingest")
    if not data.exists():
        raise FileNotFoundError(f"no such data file: {data}")
    ds = parse_triples(data)
    save_cache(ds, out / "dataset.cache")
    write_stats_csv(ds, out / "stats.csv")
    _write_config(out, "ingest", {"data": str(data)})
    click.echo(f"ingested {ds.n_triples} triples, {ds.n_entities} entities, "
               f"{ds.n_relations} relations -> {out}")


@main.command()
@_data_options
@_hyperparam_options
@click.option("--model", "model_kind", type=click.Choice(sorted(_TRAINERS)),
              default="consmrf", show_default=True)
@click.option("--shape", type=click.Choice([s.value for s in WeightShape]),
              default="diagonal", show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--track-valid", is_flag=True, default=False,
              help="Record validation AUC per round (consmrf only).")
@click.option("--timings/--no-timings", default=False, show_default=True,
              help="Write measured wall-clock times (not byte-reproducible).")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@_guarded
def train(model_kind, shape, workers, track_valid, timings, out, **options):
    """Train a model and write the checkpoint plus the learning curve."""
    out = _out_dir(out, "train")
    ds = _load_dataset(options)
    hp = _hp_from_options(options)
    splits = split_dataset(ds, seed=hp.seed, **_split_options(options))
    shape = WeightShape(shape)
    if model_kind == "consmrf":
        model = train_consmrf(splits, hp, shape=shape, n_workers=workers,
                              track_valid=track_valid)
    else:
        model = _TRAINERS[model_kind](splits, hp, shape=shape, n_workers=workers)
    extra = {"data": _data_description(options), "split": _split_options(options)}
    save_checkpoint(out / "model.ckpt", model, extra=extra)
    _write_curve_csv(out / "curve.csv", model.curve, timings)
    if timings and getattr(model, "relation_timings", None):
        with open(out / "timings.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "relation", "seconds"])
            writer.writerows(model.relation_timings)
    _write_config(out, "train", {"model": model_kind, "shape": shape.value,
                                 "workers": workers, "hyperparams": hp.to_dict(),
                                 "data": _data_description(options),
                                 "split": _split_options(options)})
    final = model.curve[-1].train_loss if model.curve else float("nan")
    click.echo(f"trained {model_kind} for {model.rounds} rounds "
               f"(final train loss {final:.6f}) -> {out}")


@main.command()
@_data_options
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--m-neg", type=int, default=None, help="Default: checkpoint value.")
@click.option("--top-k", type=int, default=None, help="Default: checkpoint value.")
@click.option("--seed", type=int, default=None, help="Default: derived from training seed.")
@click.option("--split", type=click.Choice(["test", "valid"]), default="test",
              show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@_guarded
def evaluate(checkpoint, m_neg, top_k, seed, split, out, **options):
    """Evaluate a checkpoint on the held-out split of its dataset."""
    out = _out_dir(out, "evaluate")
    if not checkpoint.exists():
        raise FileNotFoundError(f"no such checkpoint: {checkpoint}")
    model = load_checkpoint(checkpoint)
    ds = _load_dataset(options)
    stored_split = model.checkpoint_extra.get("split", {})
    splits = split_dataset(
        ds, seed=model.hp.seed,
        test_frac=stored_split.get("test_frac", options["test_frac"]),
        valid_frac=stored_split.get("valid_frac", options["valid_frac"]),
        stratified=stored_split.get("stratified", options["stratified"]))
    m_neg = model.hp.m_neg if m_neg is None else m_neg
    top_k = model.hp.top_k if top_k is None else top_k
    seed = derive_seed(model.hp.seed, 97) if seed is None else seed
    report = evaluate_model(model, splits, m_neg=m_neg, k=top_k, seed=seed,
                            split=split)
    report.write_csv(out / "report.csv", ds.relation_names)
    summary = report.summary(ds.relation_names)
    (out / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    _write_config(out, "evaluate", {"checkpoint": str(checkpoint), "split": split,
                                    "m_neg": m_neg, "top_k": top_k, "seed": seed,
                                    "data": _data_description(options)})
    click.echo(summary)


@main.command("sweep-rho")
@_data_options
@_hyperparam_options
@click.option("--values", default="0.00005,0.0005,0.005", show_default=True,
              help="Comma-separated penalty values.")
@click.option("--folds", type=int, default=1, show_default=True,
              help="Cross-validation resplits per value (1 = single split).")
@click.option("--shape", type=click.Choice([s.value for s in WeightShape]),
              default="diagonal", show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@_guarded
def sweep_rho(values, folds, shape, workers, out, **options):
    """Train and evaluate the consensus model across a penalty grid."""
    out = _out_dir(out, "sweep-rho")
    ds = _load_dataset(options)
    hp = _hp_from_options(options)
    shape = WeightShape(shape)
    rhos = [float(v) for v in values.split(",") if v.strip()]
    if folds > 1:
        fold_splits = make_folds(ds, folds, hp.seed, **{
            k: v for k, v in _split_options(options).items() if k != "stratified"})
    else:
        fold_splits = [split_dataset(ds, seed=hp.seed, **_split_options(options))]
    rows = []
    fold_rows = []
    for rho in rhos:
        reports = []
        for fold_index, splits in enumerate(fold_splits):
            hp_rho = replace(hp, rho=rho)
            model = train_consmrf(splits, hp_rho, shape=shape, n_workers=workers)
            report = evaluate_model(model, splits, m_neg=hp.m_neg, k=hp.top_k,
                                    seed=derive_seed(hp.seed, 97))
            reports.append(report)
            fold_rows.append([rho, fold_index, report.macro_auc,
                              report.macro_precision, report.macro_recall])
        agg = aggregate_fold_reports(reports)
        rows.append([rho, len(fold_splits), agg["auc"], agg["auc_ci99"],
                     agg["precision"], agg["precision_ci99"],
                     agg["recall"], agg["recall_ci99"]])
    with open(out / "rho_sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rho", "folds", "auc", "auc_ci99", "precision_at_k",
                         "precision_ci99", "recall_at_k", "recall_ci99"])
        writer.writerows(rows)
    if folds > 1:
        with open(out / "rho_folds.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rho", "fold", "auc", "precision_at_k", "recall_at_k"])
            writer.writerows(fold_rows)
    _write_config(out, "sweep-rho", {"values": rhos, "folds": folds,
                                     "shape": shape.value, "workers": workers,
                                     "hyperparams": hp.to_dict(),
                                     "data": _data_description(options),
                                     "split": _split_options(options)})
    click.echo(f"swept {len(rhos)} penalty values -> {out / 'rho_sweep.csv'}")


@main.command("bench-cores")
@_data_options
@_hyperparam_options
@click.option("--workers", default="1,2,4", show_default=True,
              help="Comma-separated worker counts.")
@click.option("--shape", type=click.Choice([s.value for s in WeightShape]),
              default="diagonal", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@_guarded
def bench_cores(workers, shape, out, **options):
    """Measure training wall time against the number of workers."""
    out = _out_dir(out, "bench-cores")
    ds = _load_dataset(options)
    hp = _hp_from_options(options)
    shape = WeightShape(shape)
    splits = split_dataset(ds, seed=hp.seed, **_split_options(options))
    counts = [int(v) for v in workers.split(",") if v.strip()]
    # Untimed warm-up so the first measured run does not pay one-off JIT costs.
    train_consmrf(splits, replace(hp, max_rounds=1), shape=shape, n_workers=counts[0])
    rows = []
    for n in counts:
        t0 = time.perf_counter()
        train_consmrf(splits, hp, shape=shape, n_workers=n)
        rows.append([n, time.perf_counter() - t0])
    with open(out / "cores.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["workers", "seconds"])
        writer.writerows(rows)
    _write_config(out, "bench-cores", {"workers": counts, "shape": shape.value,
                                       "hyperparams": hp.to_dict(),
                                       "data": _data_description(options),
                                       "split": _split_options(options)})
    for n, seconds in rows:
        click.echo(f"workers={n}: {seconds:.3f}s")


if __name__ == "__main__":
    main()
