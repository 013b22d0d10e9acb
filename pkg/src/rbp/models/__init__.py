"""Model families expressed as convergent systems."""

from .gnn import GruGraphNet, gnn_readout, gnn_step, gru_cell, node_cross_entropy, normalized_adjacency
from .hopfield import (
    HopfieldNet,
    corrupt_pattern,
    hopfield_energy,
    hopfield_readout,
    hopfield_step,
    l1_loss,
    symmetric,
)
from .meta import (
    UnrolledSgdMeta,
    init_mlp,
    inner_gradient,
    meta_inner_step,
    mlp_forward,
    mlp_problem,
    quadratic_problem,
    softmax_xent,
)

__all__ = [
    "GruGraphNet", "gnn_readout", "gnn_step", "gru_cell", "node_cross_entropy", "normalized_adjacency",
    "HopfieldNet", "corrupt_pattern", "hopfield_energy", "hopfield_readout", "hopfield_step", "l1_loss", "symmetric",
    "UnrolledSgdMeta", "init_mlp", "inner_gradient", "meta_inner_step", "mlp_forward", "mlp_problem",
    "quadratic_problem", "softmax_xent",
]
