"""Build script. The compiled DC kernel is optional: if Cython or a C
compiler is unavailable the package installs anyway and falls back to the
numpy kernel at import time."""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "opsizer._dckernel",
                ["src/opsizer/_dckernel.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except Exception:  # pragma: no cover - build environment without Cython
    ext_modules = []

setup(ext_modules=ext_modules)
