from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("camadapt")
except PackageNotFoundError:
    __version__ = "0+unknown"
