"""Backend selection for the beam kernels.

The compiled extension ``_vkcore`` is used when it was built; otherwise the
pure-numpy implementation is used.  Setting ``DNFORM_PURE_PYTHON=1`` forces
the fallback (used by the tests to exercise both paths).
"""

import os

from . import _kernel_py

BACKEND = "python"
vk_force_nl = _kernel_py.vk_force_nl
vk_tangent_nl = _kernel_py.vk_tangent_nl

if os.environ.get("DNFORM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _vkcore
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        vk_force_nl = _vkcore.vk_force_nl
        vk_tangent_nl = _vkcore.vk_tangent_nl

__all__ = ["BACKEND", "vk_force_nl", "vk_tangent_nl"]
