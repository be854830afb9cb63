"""`convnn.utils.py`"""

import copy
import re
import time

import numpy as np

SPECIFIER_RE = re.compile(r'\s*(?P<name>[\w\-]+)\s*(?:\[(?P<body>[^\[\]]*)\])?\s*')


def zeropad(num, largest):
    """Return `num` as a string left-padded with zeros to the width of `largest`.

    Examples
    --------
    >>> zeropad(3, 120)
    '003'

    """
    return f'{num:0{len(str(int(largest)))}d}'


def parse_value(value):
    """Interpret a specifier value string as a bool, None, int or float, if possible."""

    if not isinstance(value, str):
        return value
    low = value.strip().lower()
    if low in ('true', 'yes'):
        return True
    if low in ('false', 'no'):
        return False
    if low in ('none', 'null'):
        return None
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value.strip()


def get_specifier_dict(key, name_key, base_key=None, defaults=None):
    """Resolve a descriptor string `name[base, key=value, ...]` into a dict.

    Parameters
    ----------
    key : str
        The descriptor.
    name_key : str
        Key under which `name` is stored.
    base_key : str, optional
        Key under which the single value given without a key is stored.
    defaults : dict, optional
        Values for keys the descriptor leaves out.

    Returns
    -------
    dict

    Examples
    --------
    >>> get_specifier_dict(
        'branching[0.5, k=9]',
        name_key='kind',
        base_key='lambda',
        defaults={'kernel': 3},
    )
    {
        'kind': 'branching',
        'lambda': 0.5,
        'k': 9,
        'kernel': 3,
    }

    """

    if not isinstance(key, str):
        raise TypeError(f'Descriptor must be a string, not {type(key).__name__}.')
    match = SPECIFIER_RE.fullmatch(key)
    if not match:
        raise ValueError(f'Could not parse descriptor: "{key}".')

    out = {name_key: match.group('name')}
    base_values = []
    for item in filter(None, (i.strip() for i in (match.group('body') or '').split(','))):
        if '=' not in item:
            base_values.append(parse_value(item))
            continue
        s_key, s_val = (i.strip() for i in item.split('=', 1))
        if s_key in out:
            raise ValueError(f'Specifier "{s_key}" multiply defined in "{key}".')
        out[s_key] = parse_value(s_val)

    if len(base_values) > 1:
        raise ValueError(f'Only one value may be given without a key, but "{key}" has '
                         f'{len(base_values)}.')
    if base_values:
        if base_key is None:
            raise ValueError(f'Descriptor "{key}" has a value without a key, but none is '
                             f'expected.')
        if base_key in out:
            raise ValueError(f'Specifier "{base_key}" multiply defined in "{key}".')
        out[base_key] = base_values[0]

    for k, v in (defaults or {}).items():
        out.setdefault(k, copy.deepcopy(v))

    return out


def as_list(value):
    """Wrap a scalar in a list; lists and tuples are returned as lists."""
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def median_time(func, repeats=5, warmup=1):
    """Median wall time in seconds of `repeats` calls of `func` after `warmup` calls.

    Returns
    -------
    median : float
    times : list of float

    """

    if repeats < 1:
        raise ValueError(f'`repeats` must be at least 1, not {repeats}.')
    for _ in range(warmup):
        func()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        func()
        times.append(time.perf_counter() - start)
    return float(np.median(times)), times
