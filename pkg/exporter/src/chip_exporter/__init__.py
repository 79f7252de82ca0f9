"""Activation exporter for the chip toolkit file formats."""

from .export import ExportConfig, ExportResult, export

__all__ = ["ExportConfig", "ExportResult", "export"]
