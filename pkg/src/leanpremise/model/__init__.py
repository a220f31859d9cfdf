from .config import EncoderConfig, paper_retriever_config, paper_reranker_config
from .params import (
    init_params,
    init_rerank_head,
    save_checkpoint,
    load_checkpoint,
    checkpoint_fingerprint,
    CheckpointError,
)
from .encoder import forward_batch, backward_batch, pad_batch, EncoderInputError
from .mlm import MaskPlan, make_mask_plan, mlm_loss, mlm_loss_and_grads
from .optim import (
    AdamWState,
    OptimizerConfig,
    TrainingError,
    adamw_update,
    linear_lr,
    train_step,
)

__all__ = [
    "EncoderConfig",
    "paper_retriever_config",
    "paper_reranker_config",
    "init_params",
    "init_rerank_head",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_fingerprint",
    "CheckpointError",
    "forward_batch",
    "backward_batch",
    "pad_batch",
    "EncoderInputError",
    "MaskPlan",
    "make_mask_plan",
    "mlm_loss",
    "mlm_loss_and_grads",
    "AdamWState",
    "OptimizerConfig",
    "TrainingError",
    "adamw_update",
    "linear_lr",
    "train_step",
]
