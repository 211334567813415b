"""Build script: compiles the optional Cython kernel extension.

The package works without the extension; ov3dis._kernels falls back to the
NumPy backend when the compiled module is absent.  Any failure here (no
compiler, no Cython) therefore degrades to a pure-Python install instead of
aborting.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "ov3dis._kernels._accel",
                ["src/ov3dis/_kernels/_accel.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # FMA contraction would break bit-identity with the NumPy
                # backend; tests assert byte-equal outputs across backends.
                extra_compile_args=["-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover
    print(f"ov3dis: skipping Cython extension build ({exc}); "
          "the NumPy kernel backend will be used")

setup(ext_modules=ext_modules)
