import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("A2BCD_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("a2bcd._kernels", ["src/a2bcd/_kernels.pyx"],
                       include_dirs=["src/a2bcd"], extra_compile_args=["-O3"])],
            language_level=3,
        )

setup(ext_modules=ext_modules)
