"""Build the optional compiled event-loop kernel.

The package works without the extension (a pure-Python kernel is selected at
import time), so a failed compile only costs speed.
"""

import sys

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext = Extension(
        "bbbsim._ckernel",
        ["src/bbbsim/_ckernel.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off keeps the compiled kernel bit-identical to the
        # pure-Python kernel (no FMA contraction in the distance sums).
        extra_compile_args=["-O2", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize(
        [ext],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"bbbsim: skipping compiled kernel ({exc!r})", file=sys.stderr)
    ext_modules = []

setup(ext_modules=ext_modules)
