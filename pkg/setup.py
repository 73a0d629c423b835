import os

from setuptools import setup

ext_modules = []
if not os.environ.get("NPENAS_PURE_PYTHON"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "npenas.predictor._core",
                    ["src/npenas/predictor/_core.pyx"],
                    extra_compile_args=["-O3", "-march=native", "-fno-wrapv", "-fno-math-errno", "-fno-trapping-math"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
