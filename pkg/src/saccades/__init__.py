"""Saccade-driven patch sensing: masked token models, learned patch selection and tracking."""

__version__ = "0.1.0"
