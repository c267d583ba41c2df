"""Build script for the optional compiled kernel extension.

The package works without the extension: ``isqf._kernels`` falls back to the
pure numpy implementation when ``isqf._kernels._core`` is not importable.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "isqf._kernels._core",
                ["src/isqf/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
