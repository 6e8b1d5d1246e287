"""Encode prompt templates and labeled image folders into BCAE files."""

from .encoders import EncoderError, resolve_encoder
from .jobs import ExportJob, discover_classes, export_text_bank, export_visual_stream

__version__ = "0.1.0"
