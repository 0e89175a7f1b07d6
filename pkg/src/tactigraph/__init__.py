"""Tactile gesture recognition on a simulated modular robot skin."""

__version__ = "0.1.0"

GESTURES = ("poke", "double_pat", "grab", "stroke")
CLASS_INDEX = {name: i for i, name in enumerate(GESTURES)}
