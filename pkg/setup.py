"""Build script: compiles the optional pairwise-sweep extension when Cython is available.

The package works without the extension (a NumPy fallback is selected at
import time); set BILIPFACTOR_NO_EXT=1 to skip compilation explicitly.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("BILIPFACTOR_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "bilipfactor._pairwise",
                    ["src/bilipfactor/_pairwise.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except Exception:
        ext_modules = []

setup(ext_modules=ext_modules)
