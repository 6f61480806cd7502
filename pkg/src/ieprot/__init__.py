"""Intrinsic-extrinsic protein graph learning.

PDB ingestion, covalent/hydrogen-bond multi-graphs, hierarchical
pooling, and a continuous-kernel convolution classifier with its own
reverse-mode autodiff. See the README for the CLI and estimator API.
"""

from .autodiff import Tape, Tensor, gradient_check
from .chemistry import detect_hydrogen_bonds, infer_covalent_bonds, place_amide_hydrogens
from .cli import hierarchy_from_pdb
from .elements import DEFAULT_TABLE, ElementProps, load_element_table
from .errors import (
    DisconnectedGraphError,
    EmptyStructureError,
    GraphFormatError,
    IEProtError,
    NumericError,
    ParseError,
    ShapeError,
    UnknownElementError,
)
from .estimator import IEConvClassifier
from .multigraph import (
    NeighborTable,
    NeighborTableBuilder,
    ProteinGraph,
    ball_query,
    build_multigraph,
    build_neighbor_table,
    capped_hop_matrix,
    deserialize_graph,
    hop_distances,
    serialize_graph,
)
from .network import (
    CONV_VARIANTS,
    NEIGHBORHOOD_VARIANTS,
    ModelConfig,
    ModelParams,
    embed_proteins,
    init_params,
    load_checkpoint,
    model_forward,
    save_checkpoint,
)
from .pdb import ProteinStructure, parse_pdb, parse_pdb_file
from .pooling import (
    GraphHierarchy,
    PoolingMatrix,
    apply_pooling,
    build_hierarchy,
    deserialize_hierarchy,
    recompute_positions,
    serialize_hierarchy,
    spectral_cluster,
)
from .training import DatasetManifest, TrainConfig, TrainResult, evaluate, load_records, train

__version__ = "0.1.0"

__all__ = [
    "CONV_VARIANTS",
    "DEFAULT_TABLE",
    "DatasetManifest",
    "DisconnectedGraphError",
    "ElementProps",
    "EmptyStructureError",
    "GraphFormatError",
    "GraphHierarchy",
    "IEConvClassifier",
    "IEProtError",
    "ModelConfig",
    "ModelParams",
    "NEIGHBORHOOD_VARIANTS",
    "NeighborTable",
    "NeighborTableBuilder",
    "NumericError",
    "ParseError",
    "PoolingMatrix",
    "ProteinGraph",
    "ProteinStructure",
    "ShapeError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "UnknownElementError",
    "apply_pooling",
    "ball_query",
    "build_hierarchy",
    "build_multigraph",
    "build_neighbor_table",
    "capped_hop_matrix",
    "deserialize_graph",
    "deserialize_hierarchy",
    "detect_hydrogen_bonds",
    "embed_proteins",
    "evaluate",
    "gradient_check",
    "hierarchy_from_pdb",
    "hop_distances",
    "infer_covalent_bonds",
    "init_params",
    "load_checkpoint",
    "load_element_table",
    "load_records",
    "model_forward",
    "parse_pdb",
    "parse_pdb_file",
    "place_amide_hydrogens",
    "recompute_positions",
    "save_checkpoint",
    "serialize_graph",
    "serialize_hierarchy",
    "spectral_cluster",
    "train",
]
