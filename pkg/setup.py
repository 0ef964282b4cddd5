import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; coco falls back at import
    cythonize = None

extensions = []
if cythonize is not None and not os.environ.get("COCO_NO_EXT"):
    extensions = cythonize(
        [
            Extension(
                "coco._core",
                ["src/coco/_core.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
