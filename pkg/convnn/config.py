"""`convnn.config.py`

Loading of run files. A run file is a YAML document with one flat mapping per
component section; which sections are allowed depends on the command.

"""

import copy
import os
from pathlib import Path

from ruamel.yaml import YAML

from convnn.errors import ConfigurationError

SEED_ENV = 'CONVNN_SEED'


class RunConfig(object):
    """The sections of a run file, checked against the allowed keys of the command and
    completed with defaults."""

    __ALLOWED_SECTIONS = {
        'equiv': ['grid'],
        'train': ['train', 'dataset', 'model'],
        'bench': ['bench'],
    }

    __REQUIRED_SECTIONS = {
        'equiv': ['grid'],
        'train': ['dataset'],
        'bench': ['bench'],
    }

    __SEED_SECTION = {
        'equiv': 'grid',
        'train': 'train',
        'bench': 'bench',
    }

    __DEFAULTS = {
        'train': {
            'lr': 1e-4,
            'weight_decay': 0.01,
            'epochs': 1,
            'batch': 64,
            'clip_norm': 1.0,
            'seed': 0,
            'dropout': 0.0,
            'timing': False,
        },
        'dataset': {
            'kind': None,
            'path': None,
            'n_train': 1024,
            'n_test': 256,
            'image_size': 8,
            'seed': 0,
        },
        'model': {
            'arch': 'vgg',
            'layer': 'conv',
            'mixer': 'attention',
        },
        'grid': {
            'n': [4, 8, 16],
            'c': [4],
            'h': None,
            'v': None,
            'k': [1, 3, 'n'],
            'seeds': 1,
            'seed': 0,
            'perturbation': 0.0,
            'conv': [],
        },
        'bench': {
            'mixer': ['attention', 'convnn'],
            'n': [196],
            'c': [192],
            'k': [9],
            'r': [32],
            'strategy': ['all', 'random'],
            'repeats': 5,
            'warmup': 1,
            'seed': 0,
            'timing': True,
        },
    }

    __REQUIRED_KEYS = {
        'dataset': ['kind'],
    }

    __slots__ = ['_command', '_sections', '_path', '_seed_override']

    def __init__(self, command, sections, path=None):

        if command not in RunConfig.__ALLOWED_SECTIONS:
            allowed_fmt = ', '.join([f'{i!r}' for i in RunConfig.__ALLOWED_SECTIONS])
            raise ConfigurationError(f'Command {command!r} not known. Allowed commands '
                                     f'are: {allowed_fmt}.')

        sections = sections or {}
        if not isinstance(sections, dict):
            raise ConfigurationError(f'Run file must be a mapping of sections, not a '
                                     f'{type(sections).__name__}.')

        allowed = RunConfig.__ALLOWED_SECTIONS[command]
        bad_sections = list(set(sections.keys()) - set(allowed))
        if bad_sections:
            bad_fmt = ', '.join([f'"{i}"' for i in sorted(bad_sections)])
            raise ConfigurationError(f'Unknown sections for command "{command}": '
                                     f'{bad_fmt}.')

        miss_sections = list(set(RunConfig.__REQUIRED_SECTIONS[command]) -
                             set(sections.keys()))
        if miss_sections:
            miss_fmt = ', '.join([f'"{i}"' for i in sorted(miss_sections)])
            raise ConfigurationError(f'Missing sections for command "{command}": '
                                     f'{miss_fmt}.')

        resolved = {}
        for name in allowed:
            resolved[name] = self._resolve_section(name, sections.get(name))

        self._command = command
        self._sections = resolved
        self._path = None if path is None else Path(path)
        self._seed_override = self._apply_seed_env()

    def __repr__(self):
        return (f'{self.__class__.__name__}(command={self.command!r}, '
                f'sections={list(self.sections)!r})')

    @staticmethod
    def _resolve_section(name, section):

        defaults = RunConfig.__DEFAULTS[name]
        if section is None:
            section = {}
        if not isinstance(section, dict):
            raise ConfigurationError(f'Section "{name}" must be a mapping of keys to '
                                     f'values.')

        bad_keys = list(set(section.keys()) - set(defaults.keys()))
        if bad_keys:
            bad_keys_fmt = ', '.join([f'"{i}"' for i in sorted(bad_keys)])
            raise ConfigurationError(f'Unknown keys in section "{name}": '
                                     f'{bad_keys_fmt}.')

        nested = [k for k, v in section.items()
                  if isinstance(v, dict) or
                  (isinstance(v, list) and any(isinstance(i, (dict, list)) for i in v))]
        if nested:
            nested_fmt = ', '.join([f'"{i}"' for i in sorted(nested)])
            raise ConfigurationError(f'Section "{name}" must be flat, but these keys hold '
                                     f'nested values: {nested_fmt}.')

        miss_keys = [i for i in RunConfig.__REQUIRED_KEYS.get(name, [])
                     if section.get(i) is None]
        if miss_keys:
            miss_keys_fmt = ', '.join([f'"{i}"' for i in miss_keys])
            raise ConfigurationError(f'Missing keys in section "{name}": '
                                     f'{miss_keys_fmt}.')

        out = copy.deepcopy(defaults)
        out.update({k: _plain(v) for k, v in section.items()})
        return out

    def _apply_seed_env(self):
        seed = os.getenv(SEED_ENV)
        if seed is None or seed.strip() == '':
            return None
        try:
            seed = int(seed)
        except ValueError:
            raise ConfigurationError(f'Environment variable {SEED_ENV} must be an '
                                     f'integer, not {seed!r}.')
        for section in self._sections.values():
            if 'seed' in section:
                section['seed'] = seed
        return seed

    @classmethod
    def from_file(cls, command, path):
        """Load a run file."""

        path = Path(path)
        print(f'Loading run configuration from {path}...', end='', flush=True)
        if not path.is_file():
            print('Failed.')
            raise ConfigurationError(f'Run configuration file does not exist: "{path}".')
        try:
            sections = YAML(typ='safe').load(path)
            run_config = cls(command, sections, path=path)
        except Exception as err:
            print('Failed.')
            if isinstance(err, ConfigurationError):
                raise
            raise ConfigurationError(f'Could not parse run configuration file '
                                     f'"{path}": {err}') from err
        print('OK!')
        return run_config

    @property
    def command(self):
        return self._command

    @property
    def sections(self):
        return self._sections

    @property
    def path(self):
        return self._path

    @property
    def seed_override(self):
        """The seed from `CONVNN_SEED`, if set."""
        return self._seed_override

    @property
    def seed(self):
        """The run-level seed."""
        return self._sections[RunConfig.__SEED_SECTION[self.command]]['seed']

    def get(self, section):
        return self._sections[section]

    def as_dict(self):
        return copy.deepcopy(self._sections)


def _plain(value):
    """Convert YAML scalars and sequences to plain Python objects."""
    if isinstance(value, (list, tuple)):
        return [_plain(i) for i in value]
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, int):
        return int(value)
    if isinstance(value, float):
        return float(value)
    if isinstance(value, str):
        return str(value)
    return value
