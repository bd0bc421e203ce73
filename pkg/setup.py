"""Build the optional compiled convolution kernels.

The package works without them (a NumPy fallback is selected at import
time), so a failed extension build degrades to a pure-Python install
instead of aborting.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, etc.
            warnings.warn(f"compiled kernels skipped: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernels skipped for {ext.name}: {exc}")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "cdformer.autodiff.kernels._conv_cy",
        ["src/cdformer/autodiff/kernels/_conv_cy.pyx"],
        include_dirs=[numpy.get_include()],
    )
    return cythonize(
        [ext],
        compiler_directives={"boundscheck": False, "wraparound": False, "language_level": 3},
    )


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
