"""Scan-coder backend selection.

The compiled ``_entropy`` extension is used when it imports; otherwise the
pure-Python twin in ``_entropy_py``.  Set ``COEFFCRYPT_PURE_PYTHON=1`` to force
the fallback.
"""

import os

from . import _entropy_py

if os.environ.get("COEFFCRYPT_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _entropy as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _entropy_py

decode_scan = _impl.decode_scan
encode_scan = _impl.encode_scan

python_decode_scan = _entropy_py.decode_scan
python_encode_scan = _entropy_py.encode_scan
compiled_decode_scan = getattr(_compiled, "decode_scan", None)
compiled_encode_scan = getattr(_compiled, "encode_scan", None)
