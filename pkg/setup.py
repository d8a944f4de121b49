import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("hspm._kernels", ["src/hspm/_kernels.pyx"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # Pure-python fallback is selected at import time when the compiled
    # kernels are unavailable; the build must not hard-require Cython.
    ext_modules = []

setup(
    ext_modules=ext_modules,
    include_dirs=[np.get_include()],
)
