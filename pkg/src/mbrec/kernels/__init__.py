"""CSR kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementation
when the extension is not built or when MBREC_PURE_PYTHON=1 is set.
Both backends produce identical results (same accumulation order up to
float addition, verified in tests), so the choice only affects speed.
"""

import os

if os.environ.get("MBREC_PURE_PYTHON") == "1":
    from . import _csr_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _csr_cy as _impl

        BACKEND = "compiled"
    except ImportError:
        from . import _csr_py as _impl

        BACKEND = "python"

spmm = _impl.spmm
spmm_t = _impl.spmm_t


def get_backends():
    """Return ``{name: module}`` for every importable backend (benchmarks)."""
    from . import _csr_py

    backends = {"python": _csr_py}
    try:
        from . import _csr_cy

        backends["compiled"] = _csr_cy
    except ImportError:
        pass
    return backends
