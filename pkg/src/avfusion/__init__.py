"""Audio-visual sequence regression with peephole LSTMs and four fusion
strategies (early, model-level, late, conditional attention)."""

from .data import Recording, SplitPlan, SynthConfig, delay_search, synth_generate
from .fusion import (
    ConditionalAttentionFusion,
    EarlyFusion,
    GateParams,
    LateFusion,
    ModelLevelFusion,
    ReliabilitySignals,
    attention_gate,
    ca_backward,
    ca_forward,
    gate_loss,
    gate_loss_grad,
    total_loss,
)
from .lstm import LstmLayerParams, LstmStack, lstm_step, stack_backward, stack_forward
from .numeric import binomial_kernel, make_rng, sigmoid, tanh_act, xavier_init
from .pipeline import (
    DelaySpec,
    MetricsReport,
    NormStats,
    apply_norm,
    ccc,
    evaluate,
    fit_norm,
    pcc,
    rmse,
    shift_for_delay,
    smooth,
    unshift_predictions,
)
from .training import (
    DataSplit,
    GradCheckReport,
    TrainConfig,
    TrainHistory,
    grad_check,
    sgd_step,
    train_fusion,
    train_unimodal,
)

__version__ = "0.1.0"
