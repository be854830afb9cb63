"""`convnn.api.py`

This module contains the application programming interface (API) to `convnn`,
and includes functions that are called by the command line interface (CLI; in
`convnn.cli.py`).

"""

import csv
import itertools
import operator
from pathlib import Path

import h5py
import hickle
import numpy as np
import structlog
from ruamel.yaml import YAML

from convnn._version import __version__
from convnn.cnnt import save_checkpoint
from convnn.config import RunConfig
from convnn.hicklable import to_hicklable
from convnn.models.datasets import load_dataset
from convnn.models.oracles import check_attention_reduction, check_conv_reduction
from convnn.models.operator import flop_estimate
from convnn.models.tensor import Tensor
from convnn.models.training import train as train_model
from convnn.utils import median_time
from convnn.validation import validate_bench, validate_grid, validate_train
from convnn.verification import run_suites

log = structlog.get_logger()

BENCH_HEADER = ['mixer', 'n', 'c', 'k', 'r', 'strategy', 'flops', 'median_seconds',
                'seed']


def write_run_archive(path, run_obj, seed):
    """Write a run object to an HDF5 run archive using `hickle`.

    Parameters
    ----------
    path : str or Path
        Path of the archive; must not exist.
    run_obj : dict
        Configuration, metrics and reports of the run.
    seed : int
        Run-level seed, stored as a file attribute next to the `convnn` version.

    """

    run_obj = to_hicklable(run_obj)
    with h5py.File(path, 'w-') as handle:
        handle.attrs['convnn_version'] = __version__
        handle.attrs['seed'] = int(seed)
        group = handle.create_group('run_obj')
        hickle.dump(run_obj, handle, path=group.name)


def _yaml_plain(obj):
    if isinstance(obj, dict):
        return {str(k): _yaml_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        return [_yaml_plain(i) for i in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_yaml(path, data):
    YAML().dump(_yaml_plain(to_hicklable(data)), Path(path))


def _sibling(out_path, suffix):
    """A path next to `out_path` sharing its stem, e.g. `report.run.yml`."""
    return out_path.with_name(out_path.stem + suffix)


def verify(filter=None, perturbation=0.0):
    """Run the property suites.

    Parameters
    ----------
    filter : str, optional
        Name of a single suite to run. By default, all suites are run.
    perturbation : float, optional
        Perturbation added to the unit aggregation weights of the attention
        equivalence fixture; a non-zero value must make that suite fail.

    Returns
    -------
    results : list of PropertyResult

    """

    return run_suites(filter=filter, perturbation=perturbation, echo=True)


def equiv(config_path, out_path):
    """Check the attention and convolution reductions over a grid of cases.

    One JSON-lines record is written to `out_path` per grid point. The resolved
    configuration is written next to it (`<stem>.run.yml`), and all reports are
    archived in `<stem>.hdf5`.

    Parameters
    ----------
    config_path : str or Path
        Path to a run file with a `grid` section.
    out_path : str or Path
        Path of the JSON-lines report file.

    Returns
    -------
    reports : list of EquivalenceReport

    """

    run_config = RunConfig.from_file('equiv', config_path)
    points, conv_grids = validate_grid(run_config.get('grid'))
    perturbation = run_config.get('grid')['perturbation']

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    reports = []
    with out_path.open('w') as handle:
        for point in points:
            report = check_attention_reduction(point['n'], point['c'], point['h'],
                                               point['v'], point['k'], point['seed'],
                                               perturbation=perturbation)
            handle.write(report.to_json() + '\n')
            reports.append(report)
        for grid in conv_grids:
            report = check_conv_reduction(grid, seed=run_config.seed)
            handle.write(report.to_json() + '\n')
            reports.append(report)

    num_failed = sum(not i.passed for i in reports)
    log.info('equivalence checked', records=len(reports), failed=num_failed,
             out=str(out_path))

    run_obj = {
        'command': 'equiv',
        'seed': run_config.seed,
        'config': run_config.as_dict(),
        'reports': [i.as_dict() for i in reports],
    }
    _write_yaml(_sibling(out_path, '.run.yml'),
                {'seed': run_config.seed, 'config': run_config.as_dict()})
    archive = _sibling(out_path, '.hdf5')
    if archive.exists():
        archive.unlink()
    write_run_archive(archive, run_obj, run_config.seed)

    return reports


def _lr_dir_name(lr):
    return f'lr_{lr!r}'


def train(config_path, out_dir):
    """Train a mini-VGG or mini-ViT model as described by a run file.

    The whole run file is validated before the dataset is loaded. Each run directory
    receives `metrics.csv`, `run.yml`, `run.hdf5` and the final `checkpoint`. When
    `train.lr` holds several learning rates, one sub-run per learning rate is written
    to `<out_dir>/lr_<value>/`.

    Parameters
    ----------
    config_path : str or Path
        Path to a run file with `train`, `dataset` and `model` sections.
    out_dir : str or Path
        Output directory.

    Returns
    -------
    runs : dict of (float, RunMetrics)

    """

    run_config = RunConfig.from_file('train', config_path)
    plan = validate_train(run_config)
    dataset = load_dataset(plan.dataset)

    out_dir = Path(out_dir)
    multi_lr = len(plan.train_cfgs) > 1
    runs = {}
    for train_cfg in plan.train_cfgs:

        run_dir = out_dir / _lr_dir_name(train_cfg.lr) if multi_lr else out_dir
        run_dir.mkdir(parents=True, exist_ok=True)

        init_seq, train_seq = np.random.SeedSequence(train_cfg.seed).spawn(2)
        model = plan.model.build(rng=np.random.default_rng(init_seq))
        num_params = model.num_parameters()

        print(f'Training {plan.model.arch} model with {num_params} parameters '
              f'(lr={train_cfg.lr!r})...', flush=True)
        metrics = train_model(model, dataset, train_cfg,
                              rng=np.random.default_rng(train_seq))

        with run_dir.joinpath('metrics.csv').open('w', newline='') as handle:
            handle.write(metrics.to_csv())

        run_info = {
            'seed': train_cfg.seed,
            'train': train_cfg.as_dict(),
            'dataset': plan.dataset.as_dict(),
            'model': plan.model.as_dict(),
            'config': run_config.as_dict(),
        }
        _write_yaml(run_dir / 'run.yml', run_info)

        archive = run_dir / 'run.hdf5'
        if archive.exists():
            archive.unlink()
        write_run_archive(archive, {**run_info, 'metrics': metrics.as_dict()},
                          train_cfg.seed)

        save_checkpoint(model, run_dir / 'checkpoint',
                        metadata={'seed': train_cfg.seed, 'lr': train_cfg.lr})

        log.info('run finished', out=str(run_dir), **metrics.summary)
        runs[train_cfg.lr] = metrics

    return runs


def _fmt(value):
    return '' if value is None else str(value)


def bench_rows(points, repeats=5, warmup=1, seed=0, timing=True):
    """FLOP estimates and median forward wall times of each benchmark point.

    Returns
    -------
    rows : list of dict
        Keyed by the columns of `BENCH_HEADER`; `median_seconds` is None when timing
        is off.

    """

    rng = np.random.default_rng(seed)
    rows = []
    for point in points:

        flops = flop_estimate(point.mixer.flop_descriptor(), point.n, point.c,
                              grid=point.grid)
        median = None
        if timing:
            module = point.mixer.build(point.c, rng, grid=point.grid).eval()
            x = Tensor(rng.normal(size=(point.n, point.c)))
            median, _ = median_time(lambda: module(x), repeats=repeats, warmup=warmup)

        row = {
            'mixer': point.label,
            'n': point.n,
            'c': point.c,
            'k': point.k,
            'r': point.r,
            'strategy': point.strategy,
            'flops': flops,
            'median_seconds': median,
            'seed': seed,
        }
        log.info('bench point', **row)
        rows.append(row)

    return rows


def monotone_in_r(rows):
    """Whether median wall time is non-decreasing in `r` for each ConvNN series.

    Returns
    -------
    dict of (tuple, bool)
        Keyed by (n, c, k, strategy); only series with at least two timed values of
        `r` are included.

    """

    series = {}
    timed = [i for i in rows if i['r'] is not None and i['median_seconds'] is not None]
    key_func = operator.itemgetter('n', 'c', 'k', 'strategy')
    for key, group in itertools.groupby(sorted(timed, key=key_func), key=key_func):
        times = [i['median_seconds'] for i in sorted(group, key=lambda row: row['r'])]
        if len(times) > 1:
            series[key] = all(a <= b for a, b in zip(times[:-1], times[1:]))
    return series


def format_bench_report(rows, monotone):
    lines = [
        f'{"mixer":<24}{"n":>6}{"c":>6}{"k":>5}{"r":>6}  {"strategy":<9}'
        f'{"GFLOPs":>10}{"median ms":>12}',
    ]
    for row in rows:
        median = row['median_seconds']
        median_fmt = '-' if median is None else f'{1e3 * median:.3f}'
        lines.append(
            f'{row["mixer"]:<24}{row["n"]:>6}{row["c"]:>6}{_fmt(row["k"]):>5}'
            f'{_fmt(row["r"]):>6}  {_fmt(row["strategy"]):<9}'
            f'{row["flops"] / 1e9:>10.4f}{median_fmt:>12}'
        )
    for (n, c, k, strategy), is_monotone in monotone.items():
        lines.append(f'wall time non-decreasing in r (n={n}, c={c}, k={k}, '
                     f'strategy={strategy}): {"yes" if is_monotone else "no"}')
    return '\n'.join(lines) + '\n'


def bench(config_path, out_path):
    """Estimate FLOPs and time the forward pass of token mixers over a sweep.

    The CSV report is written to `out_path`, a text report to `<stem>.txt` and the
    resolved configuration to `<stem>.run.yml`.

    Parameters
    ----------
    config_path : str or Path
        Path to a run file with a `bench` section.
    out_path : str or Path
        Path of the CSV report.

    Returns
    -------
    rows : list of dict

    """

    run_config = RunConfig.from_file('bench', config_path)
    section = run_config.get('bench')
    points = validate_bench(section)

    rows = bench_rows(points, repeats=section['repeats'], warmup=section['warmup'],
                      seed=run_config.seed, timing=section['timing'])
    monotone = monotone_in_r(rows)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(BENCH_HEADER)
        for row in rows:
            median = row['median_seconds']
            writer.writerow([
                row['mixer'], row['n'], row['c'], _fmt(row['k']), _fmt(row['r']),
                _fmt(row['strategy']), f'{row["flops"]:.0f}',
                '' if median is None else repr(median), row['seed'],
            ])

    report = format_bench_report(rows, monotone)
    _sibling(out_path, '.txt').write_text(report)
    print(report, end='')

    _write_yaml(_sibling(out_path, '.run.yml'),
                {'seed': run_config.seed, 'config': run_config.as_dict()})

    return rows
