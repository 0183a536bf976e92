"""Limited-feedback codebook design and sum-rate simulation for the MIMO uplink."""

__version__ = "0.1.0"
