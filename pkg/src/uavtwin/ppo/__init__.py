from .agent import (
    EpisodeMetrics,
    PPOError,
    PPOHyperparams,
    Rollout,
    TrainResult,
    Transition,
    compute_gae,
    greedy_rollout,
    ppo_update,
    sample_action,
    train,
)
from .network import (
    Adam,
    LossCoefficients,
    LossInputs,
    LossStats,
    MLPShape,
    PolicyNetwork,
    backward,
    forward,
    forward_batch,
    init_network,
    ppo_loss,
    softmax,
)
