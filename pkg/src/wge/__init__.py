"""Two-view quaternion graph neural networks for knowledge-graph link prediction."""
from pathlib import Path

__version__ = "0.1.0"

TOY_DATASET = Path(__file__).parent / "fixtures" / "toy"
