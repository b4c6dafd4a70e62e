"""Single source for the provenance string embedded in output files."""

__version__ = "0.1.0"
VERSION_STRING = f"sfsm-{__version__}"
