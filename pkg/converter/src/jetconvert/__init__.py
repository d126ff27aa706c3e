"""HDF5 top-tagging tables -> JSONL jets for the gravnorm engine."""

from .converter import ConversionReport, SchemaError, convert

__all__ = ["ConversionReport", "SchemaError", "convert"]
