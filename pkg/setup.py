import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is None:
    # No Cython: install pure Python only; kernels.py falls back at import.
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "promptmoe.estimation._speedups",
                ["src/promptmoe/estimation/_speedups.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
