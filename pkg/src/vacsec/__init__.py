"""Virtual admittance primary control with a recursive secondary voltage controller."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("vacsec")
except PackageNotFoundError:  # running from a source tree without an install
    __version__ = "0.0.0"
