"""
Command line of the MetaKRec pipeline:

    python executable.py prepare --config CONFIG
    python executable.py build-channels --config CONFIG
    python executable.py train --config CONFIG [--channels kg1,uk2] [--fusion mean] [--layers 2]
    python executable.py evaluate --config CONFIG [--checkpoint PATH]
    python executable.py ablate-layers --config CONFIG
    python executable.py ablate-fusion --config CONFIG
    python executable.py synthesize --out DIR

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import functools
import logging

import click

from Experiment.config_handling import apply_overrides, load_config
from Experiment.errors import MetaKRecError, UsageError
from Experiment.pipeline import (DEFAULT_ABLATION_LAYERS, cmd_ablate_fusion, cmd_ablate_layers, cmd_build_channels,
                                 cmd_evaluate, cmd_prepare, cmd_synthesize, cmd_train)
from Model.model import FUSION_MODES

logger = logging.getLogger("metakrec")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class PipelineGroup(click.Group):
    """Maps project errors to exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except UsageError as e:
            logger.debug("usage error", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            ctx.exit(2)
        except MetaKRecError as e:
            logger.debug("runtime error", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            ctx.exit(1)


def experiment_options(fn):
    """Config file plus the flags that override it."""
    options = [
        click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                     help="Experiment config (JSON or YAML)."),
        click.option("--channels", default=None, help="Comma separated channels, e.g. kg1,kg2,uk2."),
        click.option("--fusion", type=click.Choice(FUSION_MODES), default=None),
        click.option("--layers", type=int, default=None, help="Graph convolution layers."),
        click.option("--dim", type=int, default=None, help="Embedding size d."),
        click.option("--lr", type=float, default=None),
        click.option("--weight-decay", type=float, default=None),
        click.option("--tkg3", type=float, default=None, help="Cosine threshold of kg3."),
        click.option("--tuk1", type=float, default=None, help="Jaccard threshold of uk1."),
        click.option("--kuk2", type=int, default=None, help="Neighbours per item of uk2."),
        click.option("--cold-start", is_flag=True, default=False, help="Cold-start training set and K grid."),
        click.option("--seed", type=int, default=None, help="Training seed."),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
    ]
    for option in reversed(options):
        fn = option(fn)

    @functools.wraps(fn)
    def wrapper(config_path, **flags):
        overrides = {name: flags.pop(name) for name in
                     ("channels", "fusion", "layers", "dim", "lr", "weight_decay", "tkg3", "tuk1", "kuk2",
                      "cold_start", "seed", "out")}
        config = apply_overrides(load_config(config_path), **overrides)
        return fn(config=config, **flags)

    return wrapper


@click.group(cls=PipelineGroup)
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
def cli(verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)


@cli.command()
@experiment_options
def prepare(config):
    """Load, filter and split the interactions."""
    path = cmd_prepare(config)
    click.echo(f"manifest: {path}")


@cli.command("build-channels")
@experiment_options
def build_channels(config):
    """Build the configured Collaborative Meta-KG channels."""
    for path in cmd_build_channels(config):
        click.echo(f"channel: {path}")


@cli.command()
@experiment_options
def train(config):
    """Train on the built channels with early stopping."""
    _, result = cmd_train(config)
    click.echo(f"best epoch {result.best_epoch}: {config.train.validation_metric} "
               f"{result.best_validation_metric:.5f}")


@cli.command()
@experiment_options
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
              help="Checkpoint to evaluate, default OUT/train/checkpoint.bin.")
def evaluate(config, checkpoint):
    """Recall@K and NDCG@K on the test split."""
    report = cmd_evaluate(config, checkpoint=checkpoint)
    for k in sorted(report.metrics):
        click.echo(f"Recall@{k} {report.metrics[k]['recall']:.5f}  NDCG@{k} {report.metrics[k]['ndcg']:.5f}")


@cli.command("ablate-layers")
@experiment_options
@click.option("--max-layers", type=int, default=max(DEFAULT_ABLATION_LAYERS), show_default=True)
def ablate_layers(config, max_layers):
    """Train and evaluate once per layer count 1..MAX_LAYERS."""
    reports = cmd_ablate_layers(config, layers=tuple(range(1, max_layers + 1)))
    click.echo(f"arms: {', '.join(reports)}")


@cli.command("ablate-fusion")
@experiment_options
def ablate_fusion(config):
    """Train and evaluate once per fusion mode."""
    reports = cmd_ablate_fusion(config)
    click.echo(f"arms: {', '.join(reports)}")


@cli.command()
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--users", type=int, default=200, show_default=True)
@click.option("--items", type=int, default=200, show_default=True)
@click.option("--communities", type=int, default=2, show_default=True)
@click.option("--items-per-user", type=int, default=20, show_default=True)
@click.option("--tags", type=int, default=5, show_default=True, help="Tag groups per community.")
@click.option("--affinity", type=float, default=0.5, show_default=True, help="Share of items from the own tag group.")
@click.option("--noise", type=float, default=0.1, show_default=True, help="Share of items outside the community.")
@click.option("--kg-coverage", type=float, default=0.6, show_default=True, help="Share of items the KG knows.")
@click.option("--seed", type=int, default=0, show_default=True)
def synthesize(out, users, items, communities, items_per_user, tags, affinity, noise, kg_coverage, seed):
    """Write the planted-community benchmark and a config for it."""
    path = cmd_synthesize(out, users, items, communities, items_per_user, tags, affinity, noise, kg_coverage, seed)
    click.echo(f"config: {path}")


if __name__ == "__main__":
    cli()
