"""`convnn.models.datasets.py`

Desk-scale datasets: subsets of the CIFAR binary distributions and a synthetic
two-class texture task.

"""

from pathlib import Path

import numpy as np
import structlog

from convnn.errors import ConfigurationError, DatasetError, DatasetFormatError

log = structlog.get_logger()

ALLOWED_KINDS = ['synthetic-texture', 'cifar10-subset', 'cifar100-subset']
SYNTHETIC_SIZES = [8, 16]
CIFAR_SIZES = [8, 16, 32]

CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE

CIFAR10_MEAN = [0.4914, 0.4822, 0.4465]
CIFAR10_STD = [0.2470, 0.2435, 0.2616]
CIFAR100_MEAN = [0.5071, 0.4867, 0.4408]
CIFAR100_STD = [0.2675, 0.2565, 0.2761]

CIFAR_FILES = {
    10: (['data_batch_1.bin', 'data_batch_2.bin', 'data_batch_3.bin',
          'data_batch_4.bin', 'data_batch_5.bin'], ['test_batch.bin']),
    100: (['train.bin'], ['test.bin']),
}

SYNTHETIC_NOISE = 0.05


class DatasetDescriptor(object):

    __slots__ = ['_kind', '_path', '_n_train', '_n_test', '_image_size', '_seed']

    def __init__(self, kind, n_train, n_test, image_size=8, seed=0, path=None):
        if kind not in ALLOWED_KINDS:
            allowed_fmt = ', '.join([f'{i!r}' for i in ALLOWED_KINDS])
            raise ConfigurationError(f'Dataset kind {kind!r} not known. Allowed kinds '
                                     f'are: {allowed_fmt}.')
        for name, value in (('n_train', n_train), ('n_test', n_test)):
            if int(value) != value or value < 1:
                raise ConfigurationError(f'`{name}` must be a positive integer, not '
                                         f'{value!r}.')
        allowed_sizes = SYNTHETIC_SIZES if kind == 'synthetic-texture' else CIFAR_SIZES
        if image_size not in allowed_sizes:
            raise ConfigurationError(f'Image size {image_size!r} not supported for '
                                     f'dataset {kind!r}. Allowed sizes are: '
                                     f'{allowed_sizes!r}.')
        if kind != 'synthetic-texture' and not path:
            raise ConfigurationError(f'Dataset {kind!r} requires a `path`.')

        self._kind = kind
        self._path = None if path is None else str(path)
        self._n_train = int(n_train)
        self._n_test = int(n_test)
        self._image_size = int(image_size)
        self._seed = int(seed)

    def __repr__(self):
        return (f'{self.__class__.__name__}(kind={self.kind!r}, n_train={self.n_train}, '
                f'n_test={self.n_test}, image_size={self.image_size})')

    @property
    def kind(self):
        return self._kind

    @property
    def path(self):
        return self._path

    @property
    def n_train(self):
        return self._n_train

    @property
    def n_test(self):
        return self._n_test

    @property
    def image_size(self):
        return self._image_size

    @property
    def seed(self):
        return self._seed

    @property
    def num_classes(self):
        return {'synthetic-texture': 2, 'cifar10-subset': 10, 'cifar100-subset': 100}[
            self.kind]

    def as_dict(self):
        return {
            'kind': self.kind,
            'path': self.path,
            'n_train': self.n_train,
            'n_test': self.n_test,
            'image_size': self.image_size,
            'seed': self.seed,
        }


class Dataset(object):
    """Images as float64 [N, 3, size, size] with integer labels."""

    __slots__ = ['x_train', 'y_train', 'x_test', 'y_test', 'num_classes']

    def __init__(self, x_train, y_train, x_test, y_test, num_classes):
        self.x_train = x_train
        self.y_train = y_train
        self.x_test = x_test
        self.y_test = y_test
        self.num_classes = num_classes

    def __repr__(self):
        return (f'{self.__class__.__name__}(n_train={len(self.y_train)}, '
                f'n_test={len(self.y_test)}, image_shape={list(self.x_train.shape[1:])}, '
                f'num_classes={self.num_classes})')

    @property
    def image_size(self):
        return self.x_train.shape[-1]


def read_cifar_records(paths, num, label_bytes):
    """Read the first `num` records from a sequence of CIFAR binary files.

    Returns
    -------
    labels : ndarray of uint8, shape [num, label_bytes]
    pixels : ndarray of uint8, shape [num, 3072]

    """

    record_size = label_bytes + CIFAR_PIXELS
    chunks = []
    available = 0
    for path in paths:
        path = Path(path)
        if not path.is_file():
            raise DatasetError(f'CIFAR file does not exist: "{path}".')
        data = path.read_bytes()
        remainder = len(data) % record_size
        if remainder:
            offset = len(data) - remainder
            raise DatasetFormatError(f'Truncated CIFAR record in "{path}" at byte offset '
                                     f'{offset}: expected records of {record_size} bytes, '
                                     f'but {remainder} bytes remain.')
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, record_size)
        chunks.append(records)
        available += len(records)
        if available >= num:
            break

    if available < num:
        raise DatasetError(f'Requested {num} records, but only {available} are available.')

    records = np.concatenate(chunks)[:num]
    return records[:, :label_bytes], records[:, label_bytes:]


def normalize_pixels(pixels, classes):
    """Scale uint8 [N, 3072] pixels to [0, 1] and standardise per channel."""
    mean, std = (CIFAR10_MEAN, CIFAR10_STD) if classes == 10 else (CIFAR100_MEAN,
                                                                    CIFAR100_STD)
    images = pixels.reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.float64) / 255
    mean = np.asarray(mean)[None, :, None, None]
    std = np.asarray(std)[None, :, None, None]
    return (images - mean) / std


def load_cifar_binary(path, n_train, n_test, classes=10):
    """Load the first records of a CIFAR binary distribution.

    Parameters
    ----------
    path : str or Path
        Directory holding `data_batch_*.bin` and `test_batch.bin` (CIFAR-10) or
        `train.bin` and `test.bin` (CIFAR-100).
    n_train, n_test : int
    classes : int
        10 or 100. CIFAR-100 records hold a coarse then a fine label byte; the fine
        label is used.

    Returns
    -------
    Dataset

    """

    if classes not in CIFAR_FILES:
        raise ConfigurationError(f'CIFAR classes must be 10 or 100, not {classes!r}.')
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f'CIFAR directory does not exist: "{path}".')

    label_bytes = 1 if classes == 10 else 2
    train_files, test_files = CIFAR_FILES[classes]
    splits = []
    for files, num in ((train_files, n_train), (test_files, n_test)):
        labels, pixels = read_cifar_records([path.joinpath(i) for i in files], num,
                                            label_bytes)
        labels = labels[:, -1].astype(np.int64)
        if labels.max() >= classes:
            raise DatasetFormatError(f'Label {int(labels.max())} is out of range for '
                                     f'{classes} classes.')
        splits.append((normalize_pixels(pixels, classes), labels))

    (x_train, y_train), (x_test, y_test) = splits
    return Dataset(x_train, y_train, x_test, y_test, classes)


def downsample(images, size):
    """Average-pool [N, c, S, S] images to [N, c, size, size]; `size` must divide S."""
    side = images.shape[-1]
    if side % size:
        raise DatasetError(f'Cannot downsample {side}×{side} images to {size}×{size}.')
    f = side // size
    shape = images.shape[:-2] + (size, f, size, f)
    return images.reshape(shape).mean(axis=(-3, -1))


def _marker_cells(size):
    """Top-left cells of the 2×2 blocks lying strictly above the image diagonal and
    clear of the border."""
    return [(r, c) for r in range(1, size - 2) for c in range(r + 2, size - 2)]


def _synthetic_images(rng, labels, size):
    images = np.zeros((len(labels), 3, size, size))
    rows = np.arange(size)
    cells = _marker_cells(size)
    for idx, label in enumerate(labels):
        phase = rng.integers(0, 2)
        texture = np.repeat(((rows + phase) % 2 == 0).astype(np.float64)[:, None], size,
                            axis=1)
        r0, c0 = cells[rng.integers(0, len(cells))]
        if label == 1:
            r0, c0 = c0, r0
        for r, c in ((r0, c0), (r0 + 1, c0 + 1)):
            texture[r, c] = 1.0 - texture[r, c]
        images[idx] = texture[None]
    return images + rng.normal(0.0, SYNTHETIC_NOISE, images.shape)


def _balanced_labels(rng, num):
    labels = np.array([0] * (num // 2) + [1] * (num - num // 2), dtype=np.int64)
    return rng.permutation(labels)


def gen_synthetic(n_train, n_test, image_size=8, seed=0):
    """Generate the striped-texture marker task.

    Every image is a horizontally striped texture with a random phase and one marker:
    a 2×2 block whose main-diagonal pixels are flipped against the stripes, placed at
    least one pixel from the border. Class 0 puts the marker strictly above the image
    diagonal and class 1 at the mirrored position below it. The marker looks the same
    in both classes, so the label needs both the local cue (where the stripes break)
    and the long-range cue (where that is relative to the image diagonal). Classes are
    balanced exactly (up to one image for odd sizes) and Gaussian noise with σ = 0.05
    is added.

    Returns
    -------
    Dataset

    """

    if image_size not in SYNTHETIC_SIZES:
        raise ConfigurationError(f'Image size {image_size!r} not supported for synthetic '
                                 f'data. Allowed sizes are: {SYNTHETIC_SIZES!r}.')
    rng = np.random.default_rng(seed)
    y_train = _balanced_labels(rng, n_train)
    x_train = _synthetic_images(rng, y_train, image_size)
    y_test = _balanced_labels(rng, n_test)
    x_test = _synthetic_images(rng, y_test, image_size)
    return Dataset(x_train, y_train, x_test, y_test, 2)


def load_dataset(descriptor):
    """Resolve a `DatasetDescriptor` into a `Dataset`."""

    if descriptor.kind == 'synthetic-texture':
        dataset = gen_synthetic(descriptor.n_train, descriptor.n_test,
                                image_size=descriptor.image_size, seed=descriptor.seed)
    else:
        dataset = load_cifar_binary(descriptor.path, descriptor.n_train,
                                    descriptor.n_test, classes=descriptor.num_classes)
        if descriptor.image_size != CIFAR_SIDE:
            dataset.x_train = downsample(dataset.x_train, descriptor.image_size)
            dataset.x_test = downsample(dataset.x_test, descriptor.image_size)

    log.info('dataset loaded', kind=descriptor.kind, n_train=len(dataset.y_train),
             n_test=len(dataset.y_test), image_size=dataset.image_size,
             num_classes=dataset.num_classes)
    return dataset
