"""Build script for the optional compiled layer-sweep kernel.

The package is fully functional without the extension; the backends
package falls back to the NumPy reference implementation when the
compiled module is absent.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "adabasis.backends._layercore",
        ["src/adabasis/backends/_layercore.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3) if cythonize else [])
