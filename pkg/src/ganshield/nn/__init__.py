"""Deterministic float64 neural kernel: LSTM, dense, ADAM, gradient checking."""
from .adam import AdamState, adam_step
from .checkpoint import (
    CHECKPOINT_VERSION,
    checkpoint_document,
    dump_json,
    load_checkpoint,
    save_checkpoint,
)
from .dense import DenseParams, dense_backward, dense_forward, init_dense
from .gradcheck import grad_check
from .lstm import (
    LstmParams,
    LstmSequenceCache,
    LstmStepCache,
    init_lstm,
    lstm_backward,
    lstm_cell,
    lstm_cell_backward,
    lstm_forward,
    sigmoid,
)
from .params import ParamTensor, uniform_init

__all__ = [
    "AdamState",
    "adam_step",
    "CHECKPOINT_VERSION",
    "checkpoint_document",
    "dump_json",
    "load_checkpoint",
    "save_checkpoint",
    "DenseParams",
    "dense_backward",
    "dense_forward",
    "init_dense",
    "grad_check",
    "LstmParams",
    "LstmSequenceCache",
    "LstmStepCache",
    "init_lstm",
    "lstm_backward",
    "lstm_cell",
    "lstm_cell_backward",
    "lstm_forward",
    "sigmoid",
    "ParamTensor",
    "uniform_init",
]
