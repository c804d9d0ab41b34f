"""levitrap: charged nanodiamond Paul-trap simulation and analysis toolkit."""

__version__ = "0.1.0"
