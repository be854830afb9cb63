"""`convnn.hicklable.py`

Conversion of run objects (configurations, metrics, reports) to structures that `hickle`
can write to the HDF5 run archive.

"""

from pathlib import PurePath

import numpy as np

HICKLABLE_PRIMITIVES = (
    bool,
    int,
    float,
    str,
    np.ndarray,
    type(None),
)


def _attributes(obj):
    """Instance attributes from `__dict__` and from the `__slots__` of every class in
    the MRO."""

    attrs = {}
    for cls in reversed(type(obj).__mro__):
        slots = cls.__dict__.get('__slots__', [])
        if isinstance(slots, str):
            slots = [slots]
        for name in slots:
            if name not in ('__dict__', '__weakref__') and hasattr(obj, name):
                attrs[name] = getattr(obj, name)
    attrs.update(getattr(obj, '__dict__', {}))

    if not attrs and not hasattr(obj, '__dict__') and not hasattr(obj, '__slots__'):
        raise ValueError(f'Object not understood: {obj!r}.')
    return attrs


def to_hicklable(obj):
    """Get an object representation that can be saved to an HDF5 file using `hickle`.

    Dict keys become strings and numpy scalars become Python scalars. Objects with an
    `as_dict` method are converted through it, other objects through their attributes
    with any leading underscore removed from the attribute name.

    Parameters
    ----------
    obj : object
        Object whose hicklable representation is to be returned.

    """

    if isinstance(obj, dict):
        return {str(key): to_hicklable(value) for key, value in obj.items()}

    if isinstance(obj, (list, tuple, set)):
        items = [to_hicklable(i) for i in obj]
        if isinstance(obj, list):
            return items
        return type(obj)(items)

    if isinstance(obj, np.generic):
        return obj.item()

    if isinstance(obj, HICKLABLE_PRIMITIVES):
        return obj

    if isinstance(obj, PurePath):
        return str(obj)

    if callable(getattr(obj, 'as_dict', None)):
        return to_hicklable(obj.as_dict())

    return {name.lstrip('_'): to_hicklable(value)
            for name, value in _attributes(obj).items()}
