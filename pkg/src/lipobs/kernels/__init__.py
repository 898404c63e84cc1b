"""Kernel backend selection.

The compiled extension (``lipobs._core``) is preferred when importable;
otherwise the numpy fallback in ``kernels.pure`` is used.  Override with
LIPOBS_BACKEND=compiled|python|auto (auto is the default).  Both backends
implement the same contract; ``tests/test_kernels.py`` pins their agreement.
"""

import os

from . import pure
from .pure import (  # noqa: F401  (opcode table is part of the kernel API)
    MAX_STACK,
    OP_ABS,
    OP_ADD,
    OP_CONST,
    OP_COS,
    OP_DIV,
    OP_EXP,
    OP_MUL,
    OP_NEG,
    OP_POWI,
    OP_SIN,
    OP_SQRT,
    OP_SUB,
    OP_VAR,
)

try:
    from lipobs import _core as compiled
except ImportError:
    compiled = None

_requested = os.environ.get("LIPOBS_BACKEND", "auto").strip().lower()
if _requested == "compiled":
    if compiled is None:
        raise ImportError(
            "LIPOBS_BACKEND=compiled but the lipobs._core extension is not built"
        )
    _active = compiled
elif _requested == "python":
    _active = pure
elif _requested == "auto":
    _active = compiled if compiled is not None else pure
else:
    raise ValueError(f"unrecognized LIPOBS_BACKEND value: {_requested!r}")

backend_name = "compiled" if _active is compiled and compiled is not None else "python"

eval_program = _active.eval_program
eval_program_batch = _active.eval_program_batch
rk4_cosim = _active.rk4_cosim
