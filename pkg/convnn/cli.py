"""`convnn.cli.py`

Module that exposes a command line interface for `convnn`.

Exit codes are 0 on success, 1 when a verification property or equivalence check
fails, and 2 for usage, configuration and dataset errors.

"""
import sys

import click

from convnn import __version__
from convnn import api
from convnn.errors import (
    CheckpointError,
    ConfigurationError,
    ConvNNConfigError,
    DatasetError,
    VerificationError,
)

USAGE_ERRORS = (
    ConfigurationError,
    ConvNNConfigError,
    DatasetError,
    CheckpointError,
    VerificationError,
)


def _call(func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except USAGE_ERRORS as err:
        click.echo(f'Error: {err}', err=True)
        sys.exit(2)


@click.group()
@click.version_option(version=__version__)
def cli():
    pass


@cli.command()
@click.option('--filter', '-f', 'suite', help='Run only this property suite.')
@click.option('--perturbation', type=click.FLOAT, default=0.0, show_default=True,
              help='Perturb the unit aggregation weights of the attention fixture.')
def verify(suite=None, perturbation=0.0):
    """Run the property suites."""
    results = _call(api.verify, filter=suite, perturbation=perturbation)
    num_failed = sum(not i.passed for i in results)
    print(f'{len(results) - num_failed} passed, {num_failed} failed.', flush=True)
    sys.exit(1 if num_failed else 0)


@cli.command()
@click.option('--config', '-c', 'config_path', type=click.Path(exists=True),
              required=True)
@click.option('--out', '-o', 'out_path', type=click.Path(), required=True)
def equiv(config_path, out_path):
    """Check the attention and convolution reductions over a grid."""
    reports = _call(api.equiv, config_path, out_path)
    sys.exit(1 if any(not i.passed for i in reports) else 0)


@cli.command()
@click.option('--config', '-c', 'config_path', type=click.Path(exists=True),
              required=True)
@click.option('--out', '-o', 'out_dir', type=click.Path(file_okay=False),
              required=True)
def train(config_path, out_dir):
    """Train a mini-VGG or mini-ViT model."""
    _call(api.train, config_path, out_dir)


@cli.command()
@click.option('--config', '-c', 'config_path', type=click.Path(exists=True),
              required=True)
@click.option('--out', '-o', 'out_path', type=click.Path(), required=True)
def bench(config_path, out_path):
    """Report FLOP estimates and wall times of token mixers."""
    _call(api.bench, config_path, out_path)


if __name__ == '__main__':
    cli()
