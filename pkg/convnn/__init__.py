"""`convnn.__init__.py`"""

from convnn._version import __version__
from convnn.api import (
    verify,
    equiv,
    train,
    bench,
)
