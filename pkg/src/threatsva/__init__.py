"""Threat-driven generation of security SystemVerilog assertions."""
from __future__ import annotations

__version__ = "0.1.0"
