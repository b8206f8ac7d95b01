"""Kernel lane selection: compiled extension if built, NumPy/Python otherwise.

Set ``HJBPORT_PURE_PYTHON=1`` to force the interpreted lane (used by the
kernel benchmark and by CI to exercise both lanes).
"""

import os

if os.environ.get("HJBPORT_PURE_PYTHON", "") == "1":
    from . import _fallback as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _fallback as _impl

thomas_solve = _impl.thomas_solve
hermite_eval = _impl.hermite_eval
cumtrapz_uniform = _impl.cumtrapz_uniform


def backend_name() -> str:
    return _impl.BACKEND
