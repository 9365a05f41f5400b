"""Differentiable latent-tree models built on the sparse tree posterior."""

from .model import (
    ForwardResult,
    LatentConfig,
    backward_latent,
    compose_tree,
    cosine_grad,
    cosine_loss,
    encode,
    expected_representation,
    flat_tree,
    forward_latent,
    left_to_right_tree,
    nll_grad,
    nll_loss,
    pair_forward,
    point_mass,
    score_arcs,
)
from .params import (
    CHECKPOINT_FORMAT_VERSION,
    GradientTape,
    ModelConfig,
    ModelParams,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
)
