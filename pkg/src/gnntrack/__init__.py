"""3D multi-object tracking with a graph neural network over tracks and detections."""

__version__ = "0.1.0"
