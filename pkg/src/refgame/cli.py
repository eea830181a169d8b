"""Command-line entry point.

Every command takes a JSON run config and derives all randomness from the
config seed, so repeated invocations write byte-identical reports.  Exit
codes: 0 success, 2 config or input error, 3 numerical divergence,
4 partial multi-seed failure.
"""

from __future__ import annotations

import functools
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline
from .analysis import Protocol
from .checkpoint import load_arrays
from .config import RunConfig
from .data.splits import SPLIT_ORDER
from .data.taxonomy import build_taxonomy
from .errors import ConfigError, DataError, DivergenceError
from .report import write_report
from .seeding import derive_rng

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_PARTIAL = 4


def _fail(code: int, message) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def run_guard(fn):
    """Map domain errors onto the documented exit codes."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DivergenceError as exc:
            _fail(EXIT_DIVERGED, exc)
        except (ConfigError, DataError) as exc:
            _fail(EXIT_CONFIG, exc)
    return wrapper


def common_options(fn):
    fn = click.option("--out", "out_root", type=click.Path(), default="out",
                      show_default=True,
                      help="Output root; artifacts land in <out>/<run-id>.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override the config seed.")(fn)
    fn = click.option("--config", "config_path", required=True, type=click.Path(),
                      help="Path to the JSON run config.")(fn)
    return fn


def variant_option(fn):
    return click.option("--variant", "variants", multiple=True,
                        help="Restrict to these variant slugs (repeatable); "
                             "default is the config's variant matrix.")(fn)


def _load(config_path: str, seed: int | None, out_root: str) -> tuple[RunConfig, Path]:
    config = RunConfig.load(config_path)
    if seed is not None:
        merged = config.to_dict()
        merged["seed"] = seed
        config = RunConfig.from_dict(merged)
    return config, Path(out_root) / config.run_id


@click.group()
def main():
    """Referential-game training, evaluation, and protocol analysis."""


@main.command("gen-data")
@common_options
@click.option("--materialize", is_flag=True,
              help="Also write rendered split tensors under splits/.")
@run_guard
def gen_data(config_path, seed, out_root, materialize):
    """Write the dataset manifest (and optionally the rendered splits)."""
    config, out_dir = _load(config_path, seed, out_root)
    manifest, datasets = pipeline.ensure_data(config, out_dir, materialize=materialize)
    click.echo(f"manifest: {out_dir / 'manifest.json'}")
    click.echo(f"config hash: {manifest.config_hash()}")
    taxonomy = build_taxonomy(config.taxonomy)
    click.echo(f"categories: {len(taxonomy.train_categories)} train "
               f"+ {len(taxonomy.holdout_categories)} holdout")
    for name in SPLIT_ORDER:
        click.echo(f"split {name}: {len(datasets[name])} images "
                   f"(sha256 {datasets[name].checksum()[:12]})")


@main.command()
@common_options
@variant_option
@run_guard
def train(config_path, seed, out_root, variants):
    """Train each variant in the matrix; checkpoints + metrics.jsonl."""
    config, out_dir = _load(config_path, seed, out_root)
    _, datasets = pipeline.ensure_data(config, out_dir)
    results = pipeline.run_train(config, out_dir, datasets, variants or None)
    for slug, result in results.items():
        last = result.metrics[-1]
        click.echo(f"{slug}: {len(result.metrics)} epochs, final loss {last.loss:.4f}, "
                   f"final train accuracy {last.accuracy:.4f}")
    click.echo(f"checkpoints: {out_dir / 'checkpoints'}")


@main.command("eval")
@common_options
@variant_option
@click.option("--splits", "splits_csv", default=None,
              help="Comma-separated subset of val,holdout,blob (default: all).")
@click.option("--n", "n_candidates", type=int, default=None,
              help="Candidates per game (default from config).")
@click.option("--games", type=int, default=None,
              help="Games per split (default from config).")
@run_guard
def eval_cmd(config_path, seed, out_root, variants, splits_csv, n_candidates, games):
    """Game accuracy with hard messages on held-out splits."""
    config, out_dir = _load(config_path, seed, out_root)
    _, datasets = pipeline.ensure_data(config, out_dir)
    splits = tuple(s.strip() for s in splits_csv.split(",")) if splits_csv else None
    report = pipeline.run_eval(config, out_dir, datasets, variants or None,
                               n_candidates=n_candidates, games=games, splits=splits)
    for slug, entry in report["variants"].items():
        for split, ev in entry.items():
            click.echo(f"{slug} {split}: accuracy {ev['accuracy']:.4f} "
                       f"(chance {ev['chance']:.5f}, {ev['games']} games)")
    click.echo(f"report: {out_dir / 'eval.json'}")


def _analyze_records(config: RunConfig, out_dir: Path, records_path: str) -> None:
    protocol = Protocol.load_csv(records_path)
    taxonomy = build_taxonomy(config.taxonomy)
    similarity = taxonomy.leaf_similarity_matrix()
    cats = np.asarray(protocol.categories)
    if cats.size and (cats.min() < 0 or cats.max() >= similarity.shape[0]):
        raise DataError(f"record categories must lie in [0, {similarity.shape[0] - 1}] "
                        f"to use the taxonomy similarity; got range "
                        f"[{cats.min()}, {cats.max()}]")
    entry = pipeline.analyze_protocol(
        protocol, similarity, config.analysis.permutations, config.analysis.alpha,
        config.analysis.pair_cap,
        rng_nmi=derive_rng(config.seed, "perm", "records", "nmi"),
        rng_wnsim=derive_rng(config.seed, "perm", "records", "wnsim"))
    report = {"config": config.to_dict(), "seed": config.seed,
              "records": os.path.basename(records_path), "analysis": entry}
    out_dir.mkdir(parents=True, exist_ok=True)
    pipeline.dump_json(out_dir / "analysis-records.json", report)
    for name in ("nmi", "wnsim"):
        value = entry[name]["value"]
        test = entry[f"{name}_test"]
        if value is None or not test["testable"]:
            click.echo(f"{name}: NS (not testable)")
        else:
            mark = "significant" if test["significant"] else "NS"
            click.echo(f"{name}: {value:.6f} (p={test['p_value']:.6f}, {mark})")
    click.echo(f"report: {out_dir / 'analysis-records.json'}")


def _analyze_features(config: RunConfig, out_dir: Path, features_path: str,
                      k: int) -> None:
    arrays = load_arrays(features_path)
    if "features" not in arrays or "labels" not in arrays:
        raise DataError(f"{features_path} must contain 'features' and 'labels' arrays")
    entry = pipeline.kmeans_report(np.asarray(arrays["features"], dtype=np.float64),
                                   arrays["labels"].astype(np.int64), k,
                                   derive_rng(config.seed, "kmeans", "features"))
    report = {"config": config.to_dict(), "seed": config.seed,
              "features": os.path.basename(features_path), "kmeans": entry}
    out_dir.mkdir(parents=True, exist_ok=True)
    pipeline.dump_json(out_dir / "analysis-features.json", report)
    click.echo(f"kmeans k={k}: nMI {entry['nmi']['value']:.6f} "
               f"({entry['iterations']} iterations)")
    click.echo(f"report: {out_dir / 'analysis-features.json'}")


@main.command()
@common_options
@variant_option
@click.option("--records", "records_path", type=click.Path(), default=None,
              help="Score a (sample_id,category,symbol) CSV instead of checkpoints.")
@click.option("--features", "features_path", type=click.Path(), default=None,
              help="Cluster a cached feature file instead of checkpoints.")
@click.option("--k", type=int, default=None,
              help="Cluster count for --features (default: vocab size).")
@run_guard
def analyze(config_path, seed, out_root, variants, records_path, features_path, k):
    """Protocol metrics (|P|, nMI, WNsim) with permutation tests."""
    config, out_dir = _load(config_path, seed, out_root)
    if records_path is not None and features_path is not None:
        raise ConfigError("--records and --features are mutually exclusive")
    if records_path is not None:
        _analyze_records(config, out_dir, records_path)
        return
    if features_path is not None:
        _analyze_features(config, out_dir, features_path,
                          k if k is not None else config.channel.vocab_size)
        return
    _, datasets = pipeline.ensure_data(config, out_dir)
    report = pipeline.run_analyze(config, out_dir, datasets, variants or None)
    for slug, entry in report["variants"].items():
        for split, stats in entry["splits"].items():
            nmi = stats["nmi"]["value"]
            sig = "significant" if stats["nmi_test"]["significant"] else "NS"
            click.echo(f"{slug} {split}: |P|={stats['protocol_size']} "
                       f"nMI={nmi:.4f} ({sig})")
    click.echo(f"report: {out_dir / 'analysis.json'}")


@main.command()
@common_options
@variant_option
@click.option("--cache-features", is_flag=True,
              help="Save trained val-split features under features/.")
@run_guard
def probe(config_path, seed, out_root, variants, cache_features):
    """Linear probes on frozen encoder features: trained vs random-init."""
    config, out_dir = _load(config_path, seed, out_root)
    manifest, datasets = pipeline.ensure_data(config, out_dir)
    report = pipeline.run_probe(config, out_dir, datasets, manifest, variants or None,
                                cache_features=cache_features)
    for slug, entry in report["variants"].items():
        for tag in ("trained", "random_init"):
            acc = entry[tag]["in_distribution"]["accuracy"]
            tr = entry[tag]["transfer"]["accuracy"]
            click.echo(f"{slug} {tag}: in-dist {acc:.4f}, transfer {tr:.4f}")
    click.echo(f"report: {out_dir / 'probe.json'}")


@main.command()
@common_options
@click.option("--seeds", "seeds_csv", default="0,1,2", show_default=True,
              help="Comma-separated seed list (at least 2 distinct).")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel seed processes; capped by REFGAME_THREADS.")
@run_guard
def seeds(config_path, seed, out_root, seeds_csv, jobs):
    """Full pipeline per seed; avg/sd/min/max table over every metric."""
    config, out_dir = _load(config_path, seed, out_root)
    try:
        seed_list = tuple(int(s) for s in seeds_csv.split(","))
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {seeds_csv!r}")
    cap = os.environ.get("REFGAME_THREADS")
    if cap is not None:
        try:
            jobs = max(1, min(jobs, int(cap)))
        except ValueError:
            raise ConfigError(f"REFGAME_THREADS must be an integer, got {cap!r}")
    report = pipeline.run_seeds(config, out_dir, seed_list, jobs=jobs)
    click.echo(f"seeds: {report['seeds']}")
    click.echo(f"metrics aggregated: {len(report['metrics'])}")
    click.echo(f"report: {out_dir / 'seeds.json'}")
    if report["failures"]:
        for bad_seed, err in report["failures"].items():
            click.echo(f"seed {bad_seed} failed: {err}", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command()
@common_options
@run_guard
def report(config_path, seed, out_root):
    """Draw an SVG summary (accuracy curves, per-split bars, protocol scores)."""
    config, out_dir = _load(config_path, seed, out_root)
    path = write_report(out_dir)
    click.echo(f"report: {path}")


if __name__ == "__main__":
    main()
