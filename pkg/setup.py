"""Build the compiled training kernels.

The extension is optional: if Cython or a compiler is unavailable the
package installs without it and uses the numpy kernels.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("ACFATIGUE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "acfatigue._kernels._core",
                    ["src/acfatigue/_kernels/_core.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # no -ffast-math: results must stay IEEE-reproducible
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
