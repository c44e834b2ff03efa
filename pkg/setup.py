import os

from setuptools import Extension, setup

# The compiled GRU kernel is optional: the package falls back to the pure
# numpy implementation when the extension is absent (or when the env var
# LISTENHEAD_SKIP_EXT is set at build time).
ext_modules = []
if not os.environ.get("LISTENHEAD_SKIP_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            Extension(
                "listenhead._gru_ext",
                ["src/listenhead/_gru_ext.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            ),
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
