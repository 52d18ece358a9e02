"""Build script: compiles the convolution hot-kernel extension when possible.

The package works without the extension (a numpy fallback is selected at
import time), so any failure here degrades to a pure-Python install instead
of aborting.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    compile_args = ["-O3", "-march=native"]
    link_args = []
    if sys.platform.startswith("linux"):
        compile_args.append("-fopenmp")
        link_args.append("-fopenmp")

    ext = Extension(
        "srforge._kernels.conv_ext",
        ["src/srforge/_kernels/conv_ext.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # noqa: BLE001 - missing compiler/Cython is fine
    print(f"srforge: skipping compiled kernels ({exc}); numpy fallback will be used", file=sys.stderr)

setup(ext_modules=ext_modules)
