"""Kernel backend selection.

The compiled extension (_speedups, built from Cython) is used when importable;
otherwise the numpy implementation (_py) takes over.  Set AIRFED_KERNELS=py or
AIRFED_KERNELS=ext to force a backend; ext raises if the module is not built.
"""

import os

_choice = os.environ.get("AIRFED_KERNELS", "auto").lower()
if _choice not in ("auto", "ext", "py"):
    raise RuntimeError(f"AIRFED_KERNELS must be auto, ext or py, not {_choice!r}")

if _choice in ("auto", "ext"):
    try:
        from . import _speedups as _impl
        BACKEND = "ext"
    except ImportError:
        if _choice == "ext":
            raise
        from . import _py as _impl
        BACKEND = "py"
else:
    from . import _py as _impl
    BACKEND = "py"

sample_grad = _impl.sample_grad
saga_merge = _impl.saga_merge
aircomp_receive = _impl.aircomp_receive


def get_backend(name):
    """Return the kernel module for 'py' or 'ext' (benchmarks and tests)."""
    if name == "py":
        from . import _py
        return _py
    if name == "ext":
        from . import _speedups
        return _speedups
    raise ValueError(f"unknown backend {name!r}")
