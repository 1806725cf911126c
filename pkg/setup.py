"""Build the optional Cython decoder kernels.

The package works without them; ``fcsdpc.decoder`` falls back to the
pure-Python kernels when the extension cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FCSDPC_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "fcsdpc.decoder._kernels",
                    ["src/fcsdpc/decoder/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: leaf costs must match the Python
                    # evaluator bit for bit
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
