"""Filter kernel selection.

The compiled kernel is used when the extension built; otherwise, or when the
environment variable COXAFFINE_PURE_PYTHON is set to a nonempty value, the
pure-Python reference kernel runs instead.  Both produce identical numbers.
"""

import os

if os.environ.get("COXAFFINE_PURE_PYTHON"):
    from ._filter_py import BACKEND, filter_kernel
else:
    try:
        from ._filter_core import BACKEND, filter_kernel
    except ImportError:
        from ._filter_py import BACKEND, filter_kernel

__all__ = ["filter_kernel", "BACKEND"]
