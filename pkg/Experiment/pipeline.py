import json
import logging
from pathlib import Path

from Data.dataset import (dataset_statistics, load_interactions, make_cold_start_train, split_dataset,
                          ten_core_filter)
from Data.knowledge_graph import load_kg_triples
from Data.manifest import file_sha256, read_manifest, write_manifest
from Data.synthetic import synthetic_dataset, write_synthetic
from Experiment.config_handling import apply_overrides, configure_threads, save_config, stage_hash
from Experiment.errors import ConfigError, MissingArtifactError
from Experiment.tracking import start_run
from MetaKG.channel_io import channel_path, read_channel, write_channel
from MetaKG.channels import ChannelInputs, build_channel, channel_requirements
from MetaKG.transe import augment_with_interactions, save_transe, train_transe
from Model.checkpoint import load_checkpoint, save_checkpoint
from Model.evaluate import evaluate, reports_table, write_table_tsv
from Model.model import MetaKRec, channel_attention_summary, count_parameters
from Model.train import fit

"""
Bodies of the command-line subcommands. Every command reads its inputs from, and writes
its outputs under, `config.output_dir`:

    prepared/   split manifest, splits, statistics.json        (prepare)
    channels/   <channel>.tsv, transe.bin + transe.json          (build-channels)
    train/      checkpoint.bin + .json, train_log.jsonl, config (train)
    eval/       metrics.json, metrics.tsv, attention.json        (evaluate)
    ablate_layers/, ablate_fusion/   one train/eval pair per arm + summary.json/.tsv

Each artifact embeds the hash of the config sections it was produced from; a command
reading an artifact with another hash fails with ArtifactMismatchError.
"""

logger = logging.getLogger(__name__)

DEFAULT_ABLATION_LAYERS = (1, 2, 3, 4, 5)
ABLATION_FUSIONS = ("attention", "mean", "concat")
BENCHMARK_CHANNELS = {
    "t_kg3": 0.8, "t_uk1": 0.15, "k_uk2": 10,
    "transe": {"d_kg": 16, "epochs": 200, "learning_rate": 0.5, "batch_size": 16},
}


def prepared_dir(config):
    return config.out / "prepared"


def channels_dir(config):
    return config.out / "channels"


def transe_path(config):
    return channels_dir(config) / "transe.bin"


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _load_kg(config, ds):
    if config.data.kg is None:
        return None
    return load_kg_triples(config.resolve(config.data.kg), ds.item_ids, config.resolve(config.data.alignment))


def cmd_prepare(config):
    """
    Load, filter and split the interactions and write the split manifest.

    Outputs:
    - path of the manifest
    """
    data = config.data
    ds = load_interactions(config.resolve(data.interactions), data.positive_threshold)
    if data.ten_core:
        ds = ten_core_filter(ds, data.min_degree)
    ds = split_dataset(ds, data.split_ratios, data.split_seed)
    if data.cold_start:
        ds = make_cold_start_train(ds, data.cold_start_seed)

    config_hash = stage_hash(config, "prepare")
    manifest = write_manifest(ds, prepared_dir(config), config_hash)
    stats = dataset_statistics(ds, _load_kg(config, ds))
    _write_json(prepared_dir(config) / "statistics.json", {**stats, "config_hash": config_hash})
    logger.info("Dataset statistics: %s", stats)
    return manifest


def cmd_build_channels(config):
    """
    Build every channel listed in `train.channels` and write one file per channel.
    A TransE model is trained and saved when kg3 is requested.

    Outputs:
    - list of written channel paths
    """
    ds, _ = read_manifest(prepared_dir(config), stage_hash(config, "prepare"))
    names = config.train.channels
    requirements = {name: channel_requirements(name) for name in names}
    needs_kg = [name for name, (kg, _) in requirements.items() if kg]
    if needs_kg and config.data.kg is None:
        raise ConfigError(f"channels {needs_kg} need a knowledge graph file (data.kg)")

    kg = _load_kg(config, ds) if needs_kg else None
    config_hash = stage_hash(config, "channels")
    source_hashes = {"manifest": file_sha256(prepared_dir(config) / "manifest.json")}
    if kg is not None:
        source_hashes["kg"] = file_sha256(config.resolve(config.data.kg))

    transe = None
    if any(needs_transe for _, needs_transe in requirements.values()):
        settings = config.channels.transe
        source = augment_with_interactions(kg, ds) if settings.include_interactions else kg
        transe = train_transe(source, settings)
        save_transe(transe, transe_path(config), settings, config_hash)

    inputs = ChannelInputs(
        ds=ds, kg=kg, transe=transe,
        t_kg3=config.channels.t_kg3, t_uk1=config.channels.t_uk1, k_uk2=config.channels.k_uk2,
        threads=config.threads,
    )
    written = []
    for name in names:
        g = build_channel(name, inputs)
        path = write_channel(g, channel_path(channels_dir(config), name), config_hash, source_hashes)
        logger.info("Channel %s: %s -> %s", name, g.counts(), path)
        written.append(path)
    return written


def _load_inputs(config):
    ds, _ = read_manifest(prepared_dir(config), stage_hash(config, "prepare"))
    paths = [channel_path(channels_dir(config), name) for name in config.train.channels]
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise MissingArtifactError(missing)
    channels_hash = stage_hash(config, "channels")
    graphs = [read_channel(p, ds, channels_hash) for p in paths]
    return ds, graphs


def cmd_train(config, run_dir=None):
    """
    Train on the built channels and write the best checkpoint and the epoch log.

    Outputs:
    - (model with the best weights, FitResult)
    """
    run_dir = Path(run_dir) if run_dir is not None else config.out / "train"
    configure_threads(config)
    ds, graphs = _load_inputs(config)

    settings = config.train
    model = MetaKRec(ds.num_users, ds.num_items, graphs, d=settings.d, layers=settings.layers,
                     readout=settings.readout, fusion=settings.fusion_mode, seed=settings.seed)
    params = count_parameters(model)
    logger.info("Model on channels %s: %d embedding + %d fusion parameters",
                model.channels, params.embedding, params.fusion)

    config_hash = stage_hash(config, "train")
    config_dump = config.model_dump(mode="json")
    run_name = f"MetaKRec-{settings.fusion_mode}-L{settings.layers}-{'+'.join(model.channels)}"
    with start_run(config.tracking, run_name, config_dump) as tracker:
        result = fit(model, ds, settings, log_path=run_dir / "train_log.jsonl", tracker=tracker,
                     threads=config.threads, config_hash=config_hash)
        checkpoint = save_checkpoint(model, run_dir / "checkpoint.bin", config_hash, config_dump, result.best_state)
        tracker.log_checkpoint(checkpoint, name="metakrec-model", metadata={
            "best_epoch": result.best_epoch,
            f"valid_{settings.validation_metric}": result.best_validation_metric,
        })
    save_config(config, run_dir / "config.json", config_hash)
    logger.info("Best %s %.5f at epoch %d, checkpoint %s", settings.validation_metric,
                result.best_validation_metric, result.best_epoch, checkpoint)
    return model, result


def cmd_evaluate(config, checkpoint=None, run_dir=None):
    """
    Evaluate a checkpoint on the test split with the K grid of the configured protocol.

    Outputs:
    - MetricsReport (also written as JSON and TSV)
    """
    run_dir = Path(run_dir) if run_dir is not None else config.out
    checkpoint = Path(checkpoint) if checkpoint is not None else run_dir / "train" / "checkpoint.bin"
    configure_threads(config)
    ds, graphs = _load_inputs(config)

    config_hash = stage_hash(config, "train")
    model = load_checkpoint(checkpoint, graphs, expected_hash=config_hash)
    report = evaluate(model, ds, config.eval_ks, protocol=config.protocol, split="test",
                      config_hash=config_hash, threads=config.threads)
    params = count_parameters(model)
    report.extra = {"parameters": {"embedding": params.embedding, "fusion": params.fusion}}

    eval_dir = run_dir / "eval"
    report.write(eval_dir)
    attention = channel_attention_summary(model)
    if attention:
        _write_json(eval_dir / "attention.json", {"channels": attention, "config_hash": config_hash})
    for k in sorted(report.metrics):
        logger.info("%s Recall@%d %.5f NDCG@%d %.5f", config.protocol, k, report.metrics[k]["recall"],
                    k, report.metrics[k]["ndcg"])
    return report


def _run_arms(config, arms, out_dir):
    """Train and evaluate one sub-run per (label, config) arm and write the summary table."""
    reports = {}
    for label, arm_config in arms:
        arm_dir = out_dir / label
        logger.info("Ablation arm %s", label)
        cmd_train(arm_config, run_dir=arm_dir / "train")
        reports[label] = cmd_evaluate(arm_config, run_dir=arm_dir)

    config_hash = stage_hash(config, "train")
    _write_json(out_dir / "summary.json", {
        "arms": {label: r.to_dict() for label, r in reports.items()},
        "config_hash": config_hash,
    })
    write_table_tsv(reports_table(reports), out_dir / "summary.tsv", config_hash)
    return reports


def cmd_ablate_layers(config, layers=DEFAULT_ABLATION_LAYERS):
    """Same channels and fusion, varying the number of convolution layers."""
    arms = [(f"layers_{n}", apply_overrides(config, layers=n)) for n in layers]
    return _run_arms(config, arms, config.out / "ablate_layers")


def cmd_ablate_fusion(config, fusions=ABLATION_FUSIONS):
    """Same channels and layers, varying the fusion of the channel embeddings."""
    arms = [(f"fusion_{mode}", apply_overrides(config, fusion=mode)) for mode in fusions]
    return _run_arms(config, arms, config.out / "ablate_fusion")


def cmd_synthesize(out_dir, num_users=200, num_items=200, num_communities=2, items_per_user=20,
                   tags_per_community=5, affinity=0.5, noise=0.1, kg_coverage=0.6, seed=0):
    """
    Write the planted-community benchmark and a config file pointing at it. The channel
    section carries the settings the benchmark is tuned for: a uk1 threshold between the
    Jaccard levels inside and across tag groups, and a TransE run long enough for the
    covered items of a group to share a direction.

    Outputs:
    - path of the written config.json
    """
    out_dir = Path(out_dir)
    data = synthetic_dataset(num_users, num_items, num_communities, items_per_user, tags_per_community,
                             affinity, noise, kg_coverage, seed)
    interactions, kg = write_synthetic(data, out_dir)
    config = {
        "data": {"interactions": interactions.name, "kg": kg.name, "ten_core": False},
        "channels": BENCHMARK_CHANNELS,
        "output_dir": "run",
    }
    path = _write_json(out_dir / "config.json", config)
    logger.info("Synthetic benchmark (%d users, %d items, %d communities) written to %s",
                num_users, num_items, num_communities, out_dir)
    return path
