"""Phase-field topology optimization of supercapacitor electrodes."""

__version__ = "0.1.0"
