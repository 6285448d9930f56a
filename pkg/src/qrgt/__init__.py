"""Decentralized optimization on the Stiefel manifold with quantized
Riemannian gradient tracking, plus the retraction-based tracking baseline,
Metropolis mixing, and the distributed eigenvector experiment harness.
"""

from .engine import (
    ALGO_QRGT,
    ALGO_RGT,
    AgentState,
    AlgoConfig,
    RunTrace,
    init_states,
    qrgt_epoch,
    rgt_epoch,
    run,
    safety_step_bound,
    step_size_bounds,
)
from .metrics import MetricRow, consensus_error, evaluate, mean_point, subspace_distance
from .network import MixingMatrix, Topology, build_metropolis, mix, second_singular_value
from .problems import (
    ProblemInstance,
    SyntheticSpec,
    estimate_smoothness,
    generate_synthetic,
    global_objective,
    load_mnist,
    local_euclidean_grad,
    make_instance,
    solve_ground_truth,
)
from .quantizers import (
    QuantizedGradient,
    QuantizerSpec,
    dequantize,
    quantize,
    quantize_dithered,
    quantize_landing,
    quantize_nearest,
    scale_factor,
    wire_size_bits,
)
from .stiefel import (
    ManifoldDims,
    SmoothnessConstants,
    distance_to_manifold,
    is_on_manifold,
    landing_field,
    manifold_defect,
    penalty,
    penalty_grad,
    random_stiefel,
    retract,
    riemannian_grad,
    tangent_project,
)

__version__ = "0.1.0"
