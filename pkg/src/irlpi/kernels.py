"""Backend selection for the basis-evaluation kernels.

The compiled extension is used when it imports cleanly; setting the
environment variable ``IRLPI_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("IRLPI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

basis_values = _impl.basis_values
basis_jacobian = _impl.basis_jacobian
value_and_gradient = _impl.value_and_gradient
