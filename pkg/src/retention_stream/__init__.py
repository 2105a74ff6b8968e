"""Bounded-state streaming attention: retention kernels, gated recurrences and their checks."""

__all__ = [
    "analysis",
    "backprop",
    "kernel_model",
    "linear_attention",
    "local_attention",
    "memories",
    "readout",
    "runner",
]
