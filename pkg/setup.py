"""Build script for the optional compiled core.

If Cython or a C compiler is unavailable the package still installs and
falls back to the numpy implementation in ``n2cattn._pycore``.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("N2CATTN_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "n2cattn._core",
                    ["src/n2cattn/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
