"""Gradients of convergent recurrent systems: BPTT, TBPTT and recurrent back-propagation variants."""

__version__ = "0.1.0"
