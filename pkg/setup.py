import numpy as np
from setuptools import Extension, setup

# The compiled kernels are an optional speedup: if Cython or a C compiler is
# missing the install still succeeds and the package falls back to the NumPy
# kernels at import time.
try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext = Extension(
    "m2unet.kernels._native",
    ["src/m2unet/kernels/_native.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O3"],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level=3) if cythonize else [])
