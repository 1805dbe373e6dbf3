import os
import sys

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("LACOS_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("Cython not available; installing pure-Python kernels only", file=sys.stderr)
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "lacos._kernels",
                    ["src/lacos/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # no FMA contraction: results must match the numpy fallback bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            language_level=3,
        )

setup(ext_modules=ext_modules)
