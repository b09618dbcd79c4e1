"""Link-level simulator for the LDPC-coded cell-free massive MIMO uplink with
iterative detection and decoding."""

__version__ = "0.1.0"
