import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("FLOWBUDGET_NO_NATIVE"):
    ext_modules = cythonize(
        [
            Extension(
                "flowbudget._kernels._native",
                ["src/flowbudget/_kernels/_native.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
