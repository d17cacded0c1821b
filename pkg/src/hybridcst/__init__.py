"""Chemical species tomography with two-level (hybrid) pixel meshes."""

__version__ = "0.1.0"
