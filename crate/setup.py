"""Builds the tdiag_py extension module with cargo.

Neither maturin nor setuptools-rust is assumed; the build step shells out
to cargo and copies the produced cdylib into place, so a plain
`pip install -e . --no-build-isolation` works with stock setuptools.
"""

import shutil
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ROOT = Path(__file__).resolve().parent


def _cdylib_name():
    if sys.platform == "darwin":
        return "libtdiag_py.dylib"
    if sys.platform.startswith("win"):
        return "tdiag_py.dll"
    return "libtdiag_py.so"


class CargoBuildExt(build_ext):
    def build_extension(self, ext):
        subprocess.run(
            ["cargo", "build", "--release", "-p", "tdiag-py"],
            check=True,
            cwd=ROOT,
        )
        built = ROOT / "target" / "release" / _cdylib_name()
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(built, dest)


setup(
    packages=[],
    py_modules=[],
    ext_modules=[Extension("tdiag_py", sources=[])],
    cmdclass={"build_ext": CargoBuildExt},
)
