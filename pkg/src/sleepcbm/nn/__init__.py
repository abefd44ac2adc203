"""Minimal numpy neural-network toolkit with hand-written gradients."""

from .attention import (AttentionParams, DeepAttention, attention_backward,
                        attention_forward, softmax)
from .gradcheck import GradCheckReport, grad_check, numerical_gradient, rel_error
from .layers import (BatchNorm1D, Conv1D, Dense, Dropout, Layer, LeakyReLU,
                     MaxPool1D, MissingCacheError, ReLU)
from .optim import Adam, LayerState, adam_step, mae_loss
from .recurrent import LSTM, BiLSTM, bilstm_forward
from .serialize import load_bundle, save_bundle

__all__ = [
    "Adam", "AttentionParams", "BatchNorm1D", "BiLSTM", "Conv1D", "DeepAttention",
    "Dense", "Dropout", "GradCheckReport", "LSTM", "Layer", "LayerState",
    "LeakyReLU", "MaxPool1D", "MissingCacheError", "ReLU", "adam_step",
    "attention_backward", "attention_forward", "bilstm_forward", "grad_check",
    "load_bundle", "mae_loss", "numerical_gradient", "rel_error", "save_bundle",
    "softmax",
]
