import os

from setuptools import Extension, setup

# The compiled kernel is optional: the package falls back to a numpy
# implementation at import time if the extension is absent.
ext_modules = []
if os.environ.get("MFBSDE_PURE_PYTHON") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "mfbsde._kernels._ckernels",
                    ["src/mfbsde/_kernels/_ckernels.pyx"],
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
