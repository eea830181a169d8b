"""End-to-end run orchestration: data, training, reports.

Every function here is deterministic given (config, seed) and writes JSON
whose bytes depend only on those inputs; wall-clock timings are confined
to ``metrics.jsonl`` epoch lines and never enter the report documents.
Directory layout per run:

    out/<run-id>/manifest.json      dataset description + checksums
    out/<run-id>/checkpoints/       <variant>.ckpt (+ .json sidecar)
    out/<run-id>/metrics.jsonl      one line per (variant, epoch)
    out/<run-id>/eval.json          game accuracies per variant and split
    out/<run-id>/analysis.json      protocol metrics, baselines
    out/<run-id>/probe.json         linear-probe results
    out/<run-id>/seeds.json         multi-seed aggregation
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .agents import extract_features
from .analysis import (Protocol, collect_protocol, kmeans, nmi_metric,
                       normalized_mutual_information, permutation_test, wnsim,
                       wnsim_metric)
from .checkpoint import save_arrays
from .config import RunConfig, parse_variant
from .data.render import RenderConfig
from .data.splits import Dataset, DatasetManifest, make_splits, realize_split
from .data.taxonomy import build_taxonomy
from .errors import ConfigError
from .game import (GameAgents, SimCLRNet, TrainResult, eval_game_accuracy,
                   eval_simclr_disc_accuracy, load_model, save_model, train)
from .probe import evaluate_probe, train_linear_probe
from .seeding import derive_rng

REPORT_SPLITS = ("val", "holdout", "blob")
PROTOCOL_SPLITS = ("val", "holdout")


def dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def ensure_data(config: RunConfig, out_dir: Path,
                materialize: bool = False) -> tuple[DatasetManifest, dict[str, Dataset]]:
    """Write (or verify) the dataset manifest and realize all splits.

    Re-running with the same config and seed is idempotent; a manifest
    from a different config in the same directory is an error.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, datasets = make_splits(seed=config.seed, taxonomy_config=config.taxonomy,
                                     render_config=config.render, counts=config.counts)
    manifest_path = out_dir / "manifest.json"
    text = manifest.to_json()
    if manifest_path.exists():
        existing = DatasetManifest.from_json(manifest_path.read_text())
        if existing.config_hash() != manifest.config_hash():
            raise ConfigError(f"{manifest_path} belongs to a different config "
                              f"(hash {existing.config_hash()[:12]} vs "
                              f"{manifest.config_hash()[:12]})")
    manifest_path.write_text(text)
    if materialize:
        split_dir = out_dir / "splits"
        split_dir.mkdir(exist_ok=True)
        for name, ds in datasets.items():
            save_arrays(split_dir / f"{name}.ckpt", ds.state_arrays())
    return manifest, datasets


def checkpoint_path(out_dir: Path, variant: str) -> Path:
    return out_dir / "checkpoints" / f"{variant}.ckpt"


def run_train(config: RunConfig, out_dir: Path, datasets: dict[str, Dataset],
              variants: tuple[str, ...] | None = None) -> dict[str, TrainResult]:
    """Train each requested variant, streaming epoch lines to metrics.jsonl.

    Lines from earlier runs of other variants are kept; retraining a
    variant replaces its lines, so reruns do not accumulate duplicates.
    """
    chosen = variants if variants is not None else config.variants
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    results: dict[str, TrainResult] = {}
    metrics_path = out_dir / "metrics.jsonl"
    kept = []
    if metrics_path.exists():
        for line in metrics_path.read_text().splitlines():
            if line.strip() and json.loads(line).get("variant") not in chosen:
                kept.append(line)
    with open(metrics_path, "w") as metrics_file:
        for line in kept:
            metrics_file.write(line + "\n")
        for slug in chosen:
            train_cfg = config.train_config(slug)

            def on_epoch(em, model, slug=slug):
                line = {"variant": slug, **em.to_dict()}
                metrics_file.write(json.dumps(line, sort_keys=True) + "\n")
                metrics_file.flush()

            result = train(train_cfg, datasets["train"], on_epoch=on_epoch)
            save_model(checkpoint_path(out_dir, slug), result)
            results[slug] = result
    return results


def load_variant(config: RunConfig, out_dir: Path, variant: str) -> TrainResult:
    path = checkpoint_path(out_dir, variant)
    if not path.is_file():
        raise ConfigError(f"no checkpoint for variant {variant!r} at {path}; train first")
    return load_model(path)


def _eval_variant(config: RunConfig, model, variant: str,
                  datasets: dict[str, Dataset],
                  splits: tuple[str, ...] = REPORT_SPLITS) -> dict:
    dtype = np.float64 if config.train.precision == "float64" else np.float32
    out = {}
    for split in splits:
        games = config.eval.blob_games if split == "blob" else config.eval.games
        rng = derive_rng(config.seed, "eval", variant, split)
        if isinstance(model, SimCLRNet):
            ev = eval_simclr_disc_accuracy(model, datasets[split],
                                           n_candidates=config.eval.n_candidates,
                                           games=games, rng=rng, dtype=dtype)
        else:
            ev = eval_game_accuracy(model, datasets[split],
                                    n_candidates=config.eval.n_candidates,
                                    games=games, rng=rng, dtype=dtype)
        out[split] = ev.to_dict()
    return out


def run_eval(config: RunConfig, out_dir: Path, datasets: dict[str, Dataset],
             variants: tuple[str, ...] | None = None,
             n_candidates: int | None = None, games: int | None = None,
             splits: tuple[str, ...] | None = None) -> dict:
    """Game accuracy per variant and split; chance included per game size."""
    chosen = variants if variants is not None else config.variants
    if splits is None:
        splits = REPORT_SPLITS
    for split in splits:
        if split not in REPORT_SPLITS:
            raise ConfigError(f"unknown eval split {split!r}; choose from {REPORT_SPLITS}")
    if n_candidates is not None or games is not None:
        eval_section = config.eval
        config = RunConfig.from_dict(merge_eval_overrides(
            config, n_candidates or eval_section.n_candidates, games or eval_section.games))
    report = {"config": config.to_dict(), "seed": config.seed, "variants": {}}
    for slug in chosen:
        result = load_variant(config, out_dir, slug)
        report["variants"][slug] = _eval_variant(config, result.model, slug, datasets,
                                                 splits=splits)
    dump_json(out_dir / "eval.json", report)
    return report


def merge_eval_overrides(config: RunConfig, n_candidates: int, games: int) -> dict:
    d = config.to_dict()
    d["eval"]["n_candidates"] = n_candidates
    d["eval"]["games"] = games
    return d


def _similarity_structure_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of the two feature sets' pairwise cosine structures."""
    def cosine_upper(x):
        xn = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-8)
        sims = xn @ xn.T
        iu = np.triu_indices(len(x), k=1)
        return sims[iu]

    u, v = cosine_upper(a), cosine_upper(b)
    return float(np.corrcoef(u, v)[0, 1])


def analyze_protocol(protocol: Protocol, similarity: np.ndarray, permutations: int,
                     alpha: float, pair_cap: int, rng_nmi, rng_wnsim) -> dict:
    """Metrics plus permutation tests for one protocol; NS cases stay explicit."""
    nmi = normalized_mutual_information(protocol.categories, protocol.symbols)
    ws = wnsim(protocol.categories, protocol.symbols, similarity, pair_cap=pair_cap)
    nmi_test = permutation_test(nmi_metric, protocol.categories, protocol.symbols,
                                permutations=permutations, alpha=alpha, rng=rng_nmi)
    ws_test = permutation_test(wnsim_metric(similarity, pair_cap=pair_cap),
                               protocol.categories, protocol.symbols,
                               permutations=permutations, alpha=alpha, rng=rng_wnsim)
    return {
        "protocol_size": protocol.size(),
        "records": len(protocol),
        "nmi": nmi.to_dict(),
        "wnsim": ws.to_dict(),
        "nmi_test": nmi_test.to_dict(),
        "wnsim_test": ws_test.to_dict(),
    }


def run_analyze(config: RunConfig, out_dir: Path, datasets: dict[str, Dataset],
                variants: tuple[str, ...] | None = None) -> dict:
    """Protocol interpretability per variant; clustering baseline for the
    contrastive model; sender-vs-receiver similarity-structure correlation
    for two-encoder game variants."""
    chosen = variants if variants is not None else config.variants
    taxonomy = build_taxonomy(config.taxonomy)
    similarity = taxonomy.leaf_similarity_matrix()
    dtype = np.float64 if config.train.precision == "float64" else np.float32
    report = {"config": config.to_dict(), "seed": config.seed, "variants": {}}
    for slug in chosen:
        result = load_variant(config, out_dir, slug)
        model = result.model
        entry: dict = {"splits": {}}
        for split in PROTOCOL_SPLITS:
            protocol = collect_protocol(model, datasets[split], dtype=dtype)
            protocol.save_csv(out_dir / f"protocol-{slug}-{split}.csv")
            entry["splits"][split] = analyze_protocol(
                protocol, similarity, config.analysis.permutations, config.analysis.alpha,
                config.analysis.pair_cap,
                rng_nmi=derive_rng(config.seed, "perm", slug, split, "nmi"),
                rng_wnsim=derive_rng(config.seed, "perm", slug, split, "wnsim"))
        if isinstance(model, GameAgents):
            sender_feats = extract_features(model.sender.encoder, datasets["val"].images,
                                            dtype=dtype)
            receiver_feats = extract_features(model.receiver.encoder, datasets["val"].images,
                                              dtype=dtype)
            entry["sender_receiver_similarity_correlation"] = \
                _similarity_structure_correlation(sender_feats, receiver_feats)
        else:
            entry["sender_receiver_similarity_correlation"] = None
            feats = extract_features(model.encoder, datasets["val"].images, dtype=dtype)
            entry["kmeans"] = kmeans_report(feats, datasets["val"].labels,
                                            config.channel.vocab_size,
                                            derive_rng(config.seed, "kmeans", slug))
        report["variants"][slug] = entry
    dump_json(out_dir / "analysis.json", report)
    return report


def kmeans_report(features: np.ndarray, labels: np.ndarray, k: int,
                  rng: np.random.Generator) -> dict:
    """Cluster features into k groups and score the clusters as symbols."""
    km = kmeans(features, k, rng)
    nmi = normalized_mutual_information(labels, km.assignments)
    return {
        "k": k,
        "iterations": km.iterations,
        "converged": km.converged,
        "inertia": km.inertia,
        "nmi": nmi.to_dict(),
    }


def _transfer_render(config: RunConfig) -> RenderConfig:
    d = config.render.to_dict()
    d["hue_shift"] = config.probe.transfer_hue_shift
    d["background"] = config.probe.transfer_background
    return RenderConfig.from_dict(d)


def _probe_encoder(model) -> object:
    # Sender-side features: the two agents' structures track each other, so
    # one side suffices, and the contrastive twin has only the one trunk.
    return model.sender.encoder if isinstance(model, GameAgents) else model.encoder


def run_probe(config: RunConfig, out_dir: Path, datasets: dict[str, Dataset],
              manifest: DatasetManifest, variants: tuple[str, ...] | None = None,
              cache_features: bool = False) -> dict:
    """Linear probes on frozen sender features: trained vs random-init,
    in-distribution and under a shifted rendering of the val split."""
    chosen = variants if variants is not None else config.variants
    dtype = np.float64 if config.train.precision == "float64" else np.float32
    transfer_val = realize_split(manifest, "val", render_override=_transfer_render(config))
    report = {"config": config.to_dict(), "seed": config.seed, "variants": {}}
    for slug in chosen:
        trained = load_variant(config, out_dir, slug)
        random_init = build_random_model(config, slug)
        entry = {}
        for tag, model in (("trained", trained.model), ("random_init", random_init)):
            encoder = _probe_encoder(model)
            train_feats = extract_features(encoder, datasets["train"].images, dtype=dtype)
            val_feats = extract_features(encoder, datasets["val"].images, dtype=dtype)
            shift_feats = extract_features(encoder, transfer_val.images, dtype=dtype)
            probe = train_linear_probe(train_feats, datasets["train"].labels,
                                       config.probe.probe_config(),
                                       rng=derive_rng(config.seed, "probe", slug, tag))
            entry[tag] = {
                "in_distribution": evaluate_probe(probe, val_feats,
                                                  datasets["val"].labels).to_dict(),
                "transfer": evaluate_probe(probe, shift_feats,
                                           transfer_val.labels).to_dict(),
                "final_train_loss": probe.loss_curve[-1],
            }
            if cache_features and tag == "trained":
                feat_dir = out_dir / "features"
                feat_dir.mkdir(exist_ok=True)
                save_arrays(feat_dir / f"{slug}-val.ckpt",
                            {"features": val_feats,
                             "labels": datasets["val"].labels,
                             "sample_ids": datasets["val"].sample_ids})
        report["variants"][slug] = entry
    dump_json(out_dir / "probe.json", report)
    return report


def build_random_model(config: RunConfig, variant: str):
    """Same architecture as the variant, fresh untrained weights drawn from a
    stream the trained model never touched."""
    from .game import build_model

    return build_model(config.train_config(variant),
                       rng=derive_rng(config.seed, "probe-random", variant))


def run_pipeline(config: RunConfig, out_dir: Path,
                 variants: tuple[str, ...] | None = None) -> dict:
    """gen-data, train, eval, analyze, probe, in order; returns file map."""
    manifest, datasets = ensure_data(config, out_dir)
    run_train(config, out_dir, datasets, variants)
    run_eval(config, out_dir, datasets, variants)
    run_analyze(config, out_dir, datasets, variants)
    run_probe(config, out_dir, datasets, manifest, variants)
    return {
        "manifest": str(out_dir / "manifest.json"),
        "eval": str(out_dir / "eval.json"),
        "analysis": str(out_dir / "analysis.json"),
        "probe": str(out_dir / "probe.json"),
    }


def _flatten_numeric(tree: dict, prefix: str = "") -> dict[str, float]:
    """Dotted paths of every numeric leaf; booleans and strings skipped."""
    out: dict[str, float] = {}
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten_numeric(value, path + "."))
        elif isinstance(value, bool):
            continue
        elif isinstance(value, (int, float)):
            out[path] = float(value)
    return out


def _seed_pipeline_job(args: tuple) -> tuple[int, str | None, dict[str, float]]:
    """Run the pipeline for one seed; returns (seed, error, metrics)."""
    config_dict, out_str, seed = args
    try:
        base = RunConfig.from_dict(config_dict)
        merged = base.to_dict()
        merged["seed"] = seed
        cfg = RunConfig.from_dict(merged)
        seed_dir = Path(out_str) / "seeds" / str(seed)
        seed_dir.mkdir(parents=True, exist_ok=True)
        manifest, datasets = ensure_data(cfg, seed_dir)
        run_train(cfg, seed_dir, datasets)
        ev = run_eval(cfg, seed_dir, datasets)
        an = run_analyze(cfg, seed_dir, datasets)
        pr = run_probe(cfg, seed_dir, datasets, manifest)
        metrics = {}
        metrics.update(_flatten_numeric(ev["variants"], "eval."))
        metrics.update(_flatten_numeric(an["variants"], "analysis."))
        metrics.update(_flatten_numeric(pr["variants"], "probe."))
        return seed, None, metrics
    except Exception as exc:  # noqa: BLE001 - reported per seed, exit code 4
        return seed, f"{type(exc).__name__}: {exc}", {}


def run_seeds(config: RunConfig, out_dir: Path, seeds: tuple[int, ...],
              jobs: int = 1) -> dict:
    """Full pipeline per seed, then avg / population sd / min / max per metric.

    Failed seeds are recorded and excluded from aggregation; the report is
    still written (partial summary).
    """
    if len(seeds) < 2:
        raise ConfigError(f"seed aggregation needs at least 2 seeds, got {len(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    out_dir.mkdir(parents=True, exist_ok=True)
    args = [(config.to_dict(), str(out_dir), s) for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_seed_pipeline_job, args))
    else:
        outcomes = [_seed_pipeline_job(a) for a in args]
    outcomes.sort(key=lambda t: seeds.index(t[0]))

    failures = {str(seed): err for seed, err, _ in outcomes if err is not None}
    per_seed = {seed: metrics for seed, err, metrics in outcomes if err is None}
    table = {}
    if per_seed:
        common = sorted(set.intersection(*[set(m) for m in per_seed.values()]))
        for name in common:
            values = np.array([per_seed[s][name] for s in seeds if s in per_seed])
            table[name] = {
                "avg": float(values.mean()),
                "sd": float(values.std()),   # population sd
                "min": float(values.min()),
                "max": float(values.max()),
                "values": [float(v) for v in values],
            }
    report = {
        "config": config.to_dict(),
        "seeds": list(seeds),
        "failures": failures,
        "metrics": table,
    }
    dump_json(out_dir / "seeds.json", report)
    return report
