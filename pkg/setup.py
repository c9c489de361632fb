"""Build script: compiles the optional Cython kernel extension.

The extension accelerates per-trajectory inner loops; if the build fails
(no compiler, no Cython) the package falls back to the pure-numpy kernels
selected at import time, so installation still succeeds.
"""

import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        sys.stderr.write(
            f"WARNING: building the sdesync._kernels extension failed ({exc}); "
            "falling back to the pure-Python kernels.\n"
        )


def extensions():
    if os.environ.get("SDESYNC_NO_EXT") == "1":
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        sys.stderr.write(
            "WARNING: Cython/numpy unavailable at build time; "
            "installing without the compiled kernels.\n"
        )
        return []
    ext = Extension(
        "sdesync._kernels",
        ["src/sdesync/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
