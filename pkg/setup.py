"""Builds the optional Cython kernels; the package still works without them."""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("MAPGEN_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "mapgen._kernels._ckernels",
                    ["src/mapgen/_kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
