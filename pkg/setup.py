"""Build script.

The only compiled piece is the split-scan kernel used by the boosted-tree
prior generator.  If Cython or a C compiler is unavailable the build falls
back to a pure-numpy implementation selected at import time, so the package
stays installable everywhere.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


ext_modules = []
cmdclass = {}

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "tabicl.prior_forge._splitscan",
                ["src/tabicl/prior_forge/_splitscan.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

    class OptionalBuildExt(build_ext):
        """Swallow compiler failures; the numpy fallback covers us."""

        def run(self):
            try:
                build_ext.run(self)
            except Exception as exc:  # pragma: no cover - depends on toolchain
                print(f"WARNING: extension build failed ({exc}); "
                      "using pure-python split scan", file=sys.stderr)

        def build_extension(self, ext):
            try:
                build_ext.build_extension(self, ext)
            except Exception as exc:  # pragma: no cover
                print(f"WARNING: could not compile {ext.name} ({exc}); "
                      "using pure-python split scan", file=sys.stderr)

    cmdclass["build_ext"] = OptionalBuildExt
except ImportError:  # pragma: no cover - Cython not installed
    pass

setup(ext_modules=ext_modules, cmdclass=cmdclass)
