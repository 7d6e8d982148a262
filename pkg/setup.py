"""Builds the optional Cython tracker kernel.

The package is fully functional without the extension (pure-Python
fallbacks in capacon.tracker); the kernel roughly halves analyze time on
long streams.
"""

from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/capacon/tracker/_kalmanc.pyx"],
        language_level=3,
    )
except ImportError:  # build proceeds without the accelerator
    ext_modules = []

setup(ext_modules=ext_modules)
