"""Build script: compiles the optional Cython conv kernels.

The package works without the extension (a numpy fallback with identical
numerics is selected at import); the build therefore never hard-fails on a
missing compiler or Cython.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/dualdiff/_kernels/_conv_cy.pyx",
        compiler_directives={"language_level": "3"},
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"dualdiff: skipping Cython extension build ({exc!r}); "
          "the pure-numpy kernel backend will be used")

setup(ext_modules=ext_modules)
