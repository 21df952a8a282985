"""midpool: node-drop graph pooling with a multidimensional score plug-in.

Pure-numpy stack: a small reverse-mode autodiff engine, GCN layers,
three pooling backbones (topk / sag / gsa), the score plug-in
(multidimensional scores, flipscore, dropscore), diagnostics, and an
experiment runner with a CLI.
"""

from midpool.autodiff import Tensor, Adam
from midpool.graphs import Graph, Dataset, FoldSplit

__all__ = ["Tensor", "Adam", "Graph", "Dataset", "FoldSplit"]
__version__ = "0.1.0"
