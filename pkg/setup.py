"""Build the optional Cython kernels.

If Cython or a C compiler is missing the package still installs; the
pure-Python kernels in ``fedms._kernels_py`` are used instead.
"""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "fedms._kernels",
                ["src/fedms/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
