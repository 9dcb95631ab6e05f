"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; setting
``EHWATER_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _pykernels

if os.environ.get("EHWATER_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND
solve_log_trace = _impl.solve_log_trace
solve_general_trace = _impl.solve_general_trace
heuristic_water = _impl.heuristic_water
static_offline_power = _impl.static_offline_power
fixed_point = _pykernels.fixed_point


def available_backends():
    mods = {"python": _pykernels}
    try:
        from . import _kernels

        mods["cython"] = _kernels
    except ImportError:
        pass
    return mods
