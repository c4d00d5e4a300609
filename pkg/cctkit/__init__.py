# cctkit - Critical clearing time estimation for mixed synchronous / grid-following systems

__version__ = "0.1.0"
