"""Page-aware layout and search for disk-resident graph ANN indexes."""
from .core import GraphIndex, IdMapping, Layout, SearchParams, SearchStats, VectorDataset
from .graph import BuildParams, build_vamana, compute_medoid
from .layout import map_layout
from .pipeline import make_layout, search_index, train_codes
from .search import SearchIndex, beamsearch, pagesearch

__all__ = [
    "BuildParams",
    "GraphIndex",
    "IdMapping",
    "Layout",
    "SearchIndex",
    "SearchParams",
    "SearchStats",
    "VectorDataset",
    "beamsearch",
    "build_vamana",
    "compute_medoid",
    "make_layout",
    "map_layout",
    "pagesearch",
    "search_index",
    "train_codes",
]

__version__ = "0.1.0"
