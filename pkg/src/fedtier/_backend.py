"""Kernel backend selection.

The package ships a compiled extension (``fedtier._kernels``) and a pure
numpy fallback (``fedtier.kernels_py``) with the same call surface. The
environment variable FEDTIER_BACKEND picks one:

  auto      compiled if the extension imported, else python (default)
  compiled  require the extension; ImportError if it is missing
  python    force the numpy fallback

``BACKEND`` names the module actually in use.
"""
from __future__ import annotations

import os

from . import kernels_py

_choice = os.environ.get("FEDTIER_BACKEND", "auto").lower()
if _choice not in ("auto", "compiled", "python"):
    raise ValueError(
        f"FEDTIER_BACKEND must be auto, compiled, or python; got {_choice!r}"
    )

if _choice == "python":
    _mod = kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _mod  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "FEDTIER_BACKEND=compiled but the fedtier._kernels extension "
                "is not built; reinstall the package or use FEDTIER_BACKEND=python"
            ) from None
        _mod = kernels_py
        BACKEND = "python"

dense_forward = _mod.dense_forward
dense_backward = _mod.dense_backward
softmax_xent = _mod.softmax_xent
