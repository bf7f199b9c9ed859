"""Random-access analysis toolkit for massive machine-type communications."""
__version__ = "0.1.0"
