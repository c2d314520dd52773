"""Digital twin and teleoperation toolkit for a tendon-driven anthropomorphic hand."""

__version__ = "0.1.0"
