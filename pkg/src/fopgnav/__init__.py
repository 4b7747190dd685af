"""Obstacle-avoiding navigation policies trained by differentiating through a
point-mass simulator and depth renderer."""

__version__ = "0.1.0"
