"""lanesim: cycle-level simulator and design-space explorer for a
bitmask-sparse bidirectional-RNN accelerator."""

from .cost import DEFAULT_COSTS, DesignCost, UnitCosts, compare, \
    cost_csr_baseline, cost_masr
from .model_io import load_network, save_dense_model, save_network
from .rnn import (
    ActVector,
    BatchNormParams,
    QuantParams,
    RnnLayer,
    RnnNetwork,
    Utterance,
    choose_predication_threshold,
    dequantize,
    encode_acts,
    forward_layer,
    forward_network,
    forward_predicated,
    generate_synthetic,
    prune_magnitude,
    quantize,
    refactor_batchnorm,
    standard_workload,
)
from .sim import (
    AcceleratorConfig,
    SimStats,
    canonical_config,
    cycle_breakdown,
    partition,
    simulate_network,
    validate_config,
)
from .sparse import (
    BitMask,
    CompactMatrix,
    CompactVector,
    CsrMatrix,
    EncodingFootprint,
    RunLengthMatrix,
    decode_vector,
    encode_csr,
    encode_runlength,
    encode_vector,
    lnzd,
    metadata_footprint,
    prefix_popcount,
    work_mask,
)

__version__ = "0.1.0"
