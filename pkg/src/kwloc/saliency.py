"""GradCAM localisation for the CNN-Pool baseline.

Filter importances are the time-averaged gradients of the keyword
probability with respect to the post-ReLU last conv layer; frame scores are
the rectified importance-weighted sum of that layer's activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .models import KeywordModel, VariantError, cnnpool_head, conv_trunk
from .tensor import Tape, Tensor


@dataclass
class SaliencyMap:
    keyword: int
    importances: np.ndarray  # gamma_k, length K
    scores: np.ndarray  # alpha_t, length T'
    frame_map: np.ndarray

    @property
    def tau(self) -> int:
        return int(self.frame_map[int(np.argmax(self.scores))])


def _head_tape(model: KeywordModel, X):
    if model.variant != "cnn-pool":
        raise VariantError(f"GradCAM applies to cnn-pool only; {model.variant} localises natively")
    h = Tensor(conv_trunk(model, X).data, requires_grad=True, name="h")
    with Tape() as tape:
        y = cnnpool_head(model, h)
    return h, y, tape


def _cam(model_h: Tensor, y: Tensor, tape: Tape, w: int) -> tuple[np.ndarray, np.ndarray]:
    seed = np.zeros_like(y.data)
    seed[w] = 1
    dh = tn.backward(y, tape, grad_output=seed)[model_h]
    gamma = dh.mean(axis=0)
    alpha = np.maximum(model_h.data @ gamma, 0)
    return gamma, alpha


def gradcam(model: KeywordModel, X, w: int) -> SaliencyMap:
    """GradCAM saliency of keyword ``w`` over the trunk frames of ``X``."""
    h, y, tape = _head_tape(model, X)
    if not 0 <= w < y.shape[0]:
        raise IndexError(f"keyword index {w} out of range")
    gamma, alpha = _cam(h, y, tape, w)
    T = np.asarray(X.data if isinstance(X, Tensor) else X).shape[0]
    return SaliencyMap(int(w), gamma, alpha, model.frame_map(T))


def gradcam_all(model: KeywordModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities ``[W]`` and saliency ``[T', W]`` for every keyword (one forward pass)."""
    h, y, tape = _head_tape(model, X)
    W = y.shape[0]
    cams = np.empty((h.shape[0], W), dtype=h.dtype)
    for w in range(W):
        cams[:, w] = _cam(h, y, tape, w)[1]
    return y.data.copy(), cams
