"""Backend selection for the hot kernels.

The compiled extension ``slt._kernels`` is used when it imports; otherwise
the NumPy versions in ``slt._kernels_py`` are.  Set ``SLT_KERNELS=python`` to
force the fallback (useful for comparing the two).
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SLT_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def cn_update(zeta, nl, xi, a, b):
    if _impl is _kernels_py or zeta.ndim != 3:
        return _kernels_py.cn_update(zeta, nl, xi, a, b)
    return _impl.cn_update(zeta, nl, xi, a, b)


def advect(u, v, zx, zy):
    if _impl is _kernels_py or u.ndim != 3:
        return _kernels_py.advect(u, v, zx, zy)
    return _impl.advect(u, v, zx, zy)


def crps_terms(truth, ens):
    return _impl.crps_terms(truth, ens)


def jet_mask(U):
    return _impl.jet_mask(U)


def first_change(counts, direction, persistence):
    return _impl.first_change(counts, int(direction), int(persistence))


def backend():
    return BACKEND
