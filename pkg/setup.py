"""Pip installation script for `convnn`."""

import re
from setuptools import find_packages, setup


def get_version():

    ver_file = 'convnn/_version.py'
    with open(ver_file) as handle:
        ver_str_line = handle.read()

    ver_pattern = r'^__version__ = [\'"]([^\'"]*)[\'"]'
    match = re.search(ver_pattern, ver_str_line, re.M)
    if match:
        ver_str = match.group(1)
    else:
        msg = 'Unable to find version string in "{}"'.format(ver_file)
        raise RuntimeError(msg)

    return ver_str


def get_long_description():

    readme_file = 'README.md'
    with open(readme_file, encoding='utf-8') as handle:
        contents = handle.read()

    return contents


setup(
    name='convnn',
    version=get_version(),
    description=('A neighbor-selection operator that specialises to convolution and '
                 'attention, with reference oracles and a desk-scale training harness.'),
    long_description=get_long_description(),
    long_description_content_type='text/markdown',
    packages=find_packages(exclude=['tests']),
    python_requires='>=3.8',
    install_requires=[
        'click>7.0',
        'hickle>=4.0.1',
        'h5py',
        'ruamel.yaml',
        'numpy',
        'structlog',
    ],
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Operating System :: OS Independent',
    ],
    entry_points="""
        [console_scripts]
        convnn=convnn.cli:cli
    """
)
