"""Build script for the optional compiled kernel.

``edgetrace/_kernels.py`` is valid Python and also valid Cython (pure-Python
mode).  When Cython and a C compiler are available it is compiled into the
``edgetrace._kernels`` extension; otherwise the package still installs and
runs the interpreted kernel.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - exercised only without Cython
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "edgetrace._kernels",
                ["src/edgetrace/_kernels.py"],
                extra_compile_args=["-O2"],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
            "infer_types": True,
        },
    )

setup(ext_modules=ext_modules)
