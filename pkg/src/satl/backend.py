"""Kernel backend selection.

At import time the compiled Cython extension (satl._kernels) is preferred;
when it is missing or unbuildable the numpy fallback (satl._kernels_py) is
used. Set SATL_BACKEND=python or SATL_BACKEND=ext to force a choice;
forcing "ext" fails loudly instead of silently degrading.

Both backends are bit-compatible: the fallback defines the reference
semantics and the extension reproduces them exactly, so results do not
depend on which one is active.
"""

import ctypes
import os
import sys


def _tune_allocator() -> None:
    """Keep large freed buffers on the heap instead of returning them to
    the kernel (glibc trims aggressively by default, which makes every
    training step page-fault its multi-MB temporaries back in; that costs
    more than the arithmetic). No-op off glibc or with SATL_NO_MALLOC_TUNING.
    """
    if os.environ.get("SATL_NO_MALLOC_TUNING") or not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
        m_trim_threshold, m_top_pad, m_mmap_threshold = -1, -2, -3
        libc.mallopt(m_trim_threshold, 1 << 29)
        libc.mallopt(m_top_pad, 1 << 25)
        libc.mallopt(m_mmap_threshold, 1 << 28)
    except OSError:
        pass


_tune_allocator()

_requested = os.environ.get("SATL_BACKEND")
if _requested not in (None, "", "ext", "python"):
    raise RuntimeError(
        f"SATL_BACKEND must be 'ext' or 'python', got {_requested!r}"
    )

kernels = None
_name = None

if _requested != "python":
    try:
        from . import _kernels as _ext_kernels

        kernels = _ext_kernels
        _name = "ext"
    except ImportError:
        if _requested == "ext":
            raise

if kernels is None:
    from . import _kernels_py as _py_kernels

    kernels = _py_kernels
    _name = "python"


def active_backend() -> str:
    """Name of the kernel backend selected at import: 'ext' or 'python'."""
    return _name
