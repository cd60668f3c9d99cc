import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    ext_modules = cythonize(
        [Extension("sglab._core", ["src/sglab/_core.pyx"], include_dirs=[np.get_include()],
                   extra_compile_args=["-O3"],
                   define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
        language_level=3)
except ImportError:  # no Cython: the pure-Python fallback is used at import
    ext_modules = []

setup(ext_modules=ext_modules)
