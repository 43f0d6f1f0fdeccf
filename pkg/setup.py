"""Build script for the optional compiled rollout kernel.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so the kernel is built best-effort.
"""

import os

from setuptools import Extension, setup

try:
    if not os.path.exists("src/pseudogames/kernels/_core.pyx"):
        raise ImportError
    from Cython.Build import cythonize
    import numpy as np

    extensions = cythonize(
        [
            Extension(
                "pseudogames.kernels._core",
                ["src/pseudogames/kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
