import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "airfed._kernels._speedups",
                ["src/airfed/_kernels/_speedups.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython: install pure-Python only; the kernel package falls back
    # to its numpy implementation at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
