"""Decoupled knowledge distillation on CPU.

A teacher actor ships final hidden states instead of logits; the student
recomputes teacher logits with the teacher's LM head and trains against
them. Subpackages: ``tensor`` (float32/BF16E arrays and a reverse-mode tape),
``model`` (decoder-only transformer), ``transport`` (shared-memory frame
channels), ``actors``, ``workflows`` and ``oracle``.
"""

from .divergence import DivergenceKind, LossBatch, distill_step_loss, kd_loss, kd_loss_topk
from .transport import comm_volume

__version__ = "0.1.0"

__all__ = ["DivergenceKind", "LossBatch", "comm_volume", "distill_step_loss", "kd_loss", "kd_loss_topk"]
