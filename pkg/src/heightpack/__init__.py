"""Height-map bin packing with heuristic, genetic and pointer-network orderings."""

from .baselines import BrkgaConfig, bbox_seq_order, brkga_order, random_order
from .instance import GenConfig, Instance, generate_dataset, generate_instance, read_dataset, write_dataset
from .metrics import RewardConfig, compactness, evaluate, penalty, pyramid
from .placement import HeightMap, PackingResult, allowable_positions, pack_sequence, select_target

__all__ = [
    "BrkgaConfig", "GenConfig", "HeightMap", "Instance", "PackingResult", "RewardConfig",
    "allowable_positions", "bbox_seq_order", "brkga_order", "compactness", "evaluate",
    "generate_dataset", "generate_instance", "pack_sequence", "penalty", "pyramid",
    "random_order", "read_dataset", "select_target", "write_dataset",
]
