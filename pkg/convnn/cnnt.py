"""`convnn.cnnt.py`

CNNT tensor files and checkpoint directories.

A CNNT file is the magic bytes `CNNT`, a little-endian u32 rank, `rank` little-endian
u32 extents, then the values as little-endian float32 in row-major order. Values are
loaded back as float64.

A checkpoint is a directory of CNNT files (one per parameter) and a `manifest.yml`
mapping parameter names to files.

"""

import struct
from pathlib import Path

import numpy as np
from ruamel.yaml import YAML

from convnn.errors import CheckpointError, DatasetFormatError
from convnn.utils import zeropad

MAGIC = b'CNNT'
MANIFEST_NAME = 'manifest.yml'


def encode_cnnt(array):
    array = np.asarray(array)
    header = MAGIC + struct.pack('<I', array.ndim)
    header += struct.pack(f'<{array.ndim}I', *array.shape)
    return header + np.ascontiguousarray(array, dtype='<f4').tobytes()


def decode_cnnt(data, source='<bytes>'):
    """Decode CNNT bytes to a float64 array."""

    if len(data) < 8:
        raise DatasetFormatError(f'Truncated CNNT header in {source} at byte offset '
                                 f'{len(data)}.')
    if data[:4] != MAGIC:
        raise DatasetFormatError(f'Bad CNNT magic {data[:4]!r} in {source} at byte '
                                 f'offset 0.')
    rank = struct.unpack_from('<I', data, 4)[0]
    offset = 8
    if len(data) < offset + 4 * rank:
        raise DatasetFormatError(f'Truncated CNNT extents in {source} at byte offset '
                                 f'{len(data)}: expected {rank} extents.')
    shape = struct.unpack_from(f'<{rank}I', data, offset)
    offset += 4 * rank
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    if len(data) - offset != expected:
        raise DatasetFormatError(f'CNNT payload in {source} starting at byte offset '
                                 f'{offset} holds {len(data) - offset} bytes, but shape '
                                 f'{list(shape)} needs {expected}.')
    values = np.frombuffer(data, dtype='<f4', offset=offset)
    return values.astype(np.float64).reshape(shape)


def write_cnnt(path, array):
    Path(path).write_bytes(encode_cnnt(array))


def read_cnnt(path):
    path = Path(path)
    return decode_cnnt(path.read_bytes(), source=f'"{path}"')


def save_checkpoint(model, directory, metadata=None):
    """Write every named parameter of `model` to `directory`.

    Parameters
    ----------
    model : Module
    directory : str or Path
        Created if missing.
    metadata : dict, optional
        Extra keys stored in the manifest.

    Returns
    -------
    Path
        The manifest file.

    """

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    named = model.named_parameters()
    entries = []
    for idx, (name, param) in enumerate(named):
        file_name = f'{zeropad(idx, len(named) - 1)}_{name}.cnnt'
        write_cnnt(directory.joinpath(file_name), param.data)
        entries.append({
            'name': name,
            'file': file_name,
            'shape': list(param.shape),
            'frozen': param.frozen,
        })

    manifest = {'format': 'CNNT', 'parameters': entries}
    if metadata:
        manifest['metadata'] = metadata
    manifest_path = directory.joinpath(MANIFEST_NAME)
    YAML().dump(manifest, manifest_path)
    return manifest_path


def load_checkpoint(model, directory, strict=True):
    """Load parameters written by `save_checkpoint` into `model`.

    Values pass through float32, so they match the saved model to single precision.

    Returns
    -------
    dict
        The manifest.

    """

    directory = Path(directory)
    manifest_path = directory.joinpath(MANIFEST_NAME)
    if not manifest_path.is_file():
        raise CheckpointError(f'Checkpoint manifest does not exist: "{manifest_path}".')
    manifest = YAML(typ='safe').load(manifest_path)
    if not isinstance(manifest, dict) or 'parameters' not in manifest:
        raise CheckpointError(f'Checkpoint manifest "{manifest_path}" has no '
                              f'`parameters`.')

    state = {}
    for entry in manifest['parameters']:
        file_path = directory.joinpath(entry['file'])
        if not file_path.is_file():
            raise CheckpointError(f'Checkpoint file does not exist: "{file_path}".')
        state[entry['name']] = read_cnnt(file_path)

    model.load_state_dict(state, strict=strict)
    return manifest
