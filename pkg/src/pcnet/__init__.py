"""PCNet and the PlantCamo benchmark harness."""

__version__ = "0.1.0"
