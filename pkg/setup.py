import os
import sys

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the NumPy kernel is used instead
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("SPLATPRIOR_NO_EXT"):
    openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
    extensions = [
        Extension(
            "splatprior._raster_ext",
            ["src/splatprior/_raster_ext.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"] + openmp,
            extra_link_args=openmp,
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
