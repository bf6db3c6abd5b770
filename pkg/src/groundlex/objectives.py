"""Training objectives: symmetric contrastive alignment, next-word
cross-entropy, and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import PAD_ID
from .errors import DataError, ShapeError
from .tensor import (
    Tensor, diag_part, l2_normalize, log_softmax, matmul, mean, mul,
    reshape, take_along_last, transpose, tsum,
)


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.07  # fixed, never trained
    normalize_embeddings: bool = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class JointConfig:
    lambda_c: float = 0.3

    def __post_init__(self):
        if self.lambda_c < 0:
            raise ValueError("lambda_c must be >= 0")


def contrastive_loss(frame_embs: Tensor, utt_embs: Tensor,
                     cfg: ContrastiveConfig = ContrastiveConfig()
                     ) -> tuple[Tensor, dict[str, float]]:
    """Symmetric in-batch contrastive loss over matched rows.

    Rows are L2-normalized first (so logits are cosine similarities over the
    temperature), each direction is an N-way softmax against the batch, and
    the two directions average: 1/2 frame-side + 1/2 utterance-side.
    Returns the scalar loss plus per-direction values for logging.
    """
    if frame_embs.shape != utt_embs.shape or frame_embs.ndim != 2:
        raise ShapeError("contrastive_loss", frame_embs.shape, utt_embs.shape)
    if cfg.normalize_embeddings:
        frame_embs = l2_normalize(frame_embs, axis=1)
        utt_embs = l2_normalize(utt_embs, axis=1)
    sims = mul(matmul(frame_embs, transpose(utt_embs, (1, 0))),
               1.0 / cfg.temperature)
    # rows: one frame vs all utterances; columns: one utterance vs all frames
    loss_frame = -mean(diag_part(log_softmax(sims, axis=1)))
    loss_utterance = -mean(diag_part(log_softmax(sims, axis=0)))
    loss = mul(loss_frame + loss_utterance, 0.5)
    return loss, {"frame": loss_frame.item(), "utterance": loss_utterance.item()}


def lm_loss(logits: Tensor, target_ids: np.ndarray) -> Tensor:
    """Mean next-word cross-entropy in nats over non-pad targets.

    logits (N, T, V) or (T, V) at position t predict target_ids[..., t];
    callers shift the ids. Pad targets are excluded from the mean.
    """
    targets = np.asarray(target_ids, dtype=np.intp)
    if logits.ndim == 2:
        logits = reshape(logits, (1,) + logits.shape)
        targets = targets[None, :]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError("lm_loss", logits.shape, targets.shape)
    valid = targets != PAD_ID
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DataError("lm_loss: every target position is <pad>")
    logprobs = take_along_last(log_softmax(logits, axis=-1),
                               np.where(valid, targets, 0))
    picked = mul(logprobs, Tensor(valid.astype(np.float64)))
    return mul(tsum(picked), -1.0 / n_valid)


def joint_loss(lm: Tensor, contrastive: Tensor,
               cfg: JointConfig = JointConfig()) -> Tensor:
    """Language-modeling loss plus lambda_c times the contrastive loss."""
    return lm + mul(contrastive, cfg.lambda_c)
