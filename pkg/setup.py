"""Build script: compiles the Cython simulation kernels when possible.

The compiled extension is optional. If Cython or a C compiler is missing the
package installs anyway and `quadgym._kernels` falls back to the pure-NumPy
implementation at import time. Set QUADGYM_SKIP_EXT=1 to force a pure-Python
install.

The flag set keeps the C kernels bit-identical to the NumPy fallback:
-ffp-contract=off forbids FMA contraction and -fno-builtin-sin/-cos forbids
GCC's sin+cos -> sincos() pairing (glibc sincos differs from separate calls
in the final bit for some arguments). Both sides then perform the same
IEEE-754 operations in the same order.
"""

import os

import numpy
from setuptools import setup

_PYX = os.path.join("src", "quadgym", "_kernels", "_core.pyx")

ext_modules = []
if os.environ.get("QUADGYM_SKIP_EXT", "0") != "1" and os.path.exists(_PYX):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "quadgym._kernels._core",
                    sources=[_PYX],
                    include_dirs=[numpy.get_include()],
                    # -ffp-contract=off: no FMA contraction.
                    # -fno-builtin-sin/-cos: stop GCC from pairing sin+cos
                    # calls into glibc sincos(), whose results differ in the
                    # last bit from separate sin()/cos() calls.
                    extra_compile_args=[
                        "-O3",
                        "-ffp-contract=off",
                        "-fno-builtin-sin",
                        "-fno-builtin-cos",
                    ],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
