import numpy as np
from setuptools import setup

# The compiled EM core is optional: without Cython (or a working compiler)
# the package falls back to the pure numpy kernels at import time.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/lsgpr/_kernels/_em_core.pyx"],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    ext_modules = []

setup(
    ext_modules=ext_modules,
    include_dirs=[np.get_include()],
)
