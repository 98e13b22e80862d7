"""Real-time reaching-motion prediction: intention detection, direction
classification with evidence accumulation, and a robot-command controller."""

__version__ = "0.1.0"
