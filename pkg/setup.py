import os

from setuptools import setup

ext_modules = []
if os.environ.get("SPARSE_ASYMPT_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # pure-Python install
        pass
    else:
        ext_modules = cythonize(
            ["src/sparse_asympt/_hom_ext.pyx"],
            compiler_directives={"language_level": "3"},
            quiet=True,
        )
        for ext in ext_modules:
            ext.optional = True

setup(ext_modules=ext_modules)
