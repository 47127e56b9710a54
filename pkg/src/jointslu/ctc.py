"""CTC negative log-likelihood with analytic gradient, plus best-path decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .lattice import collapse_ctc

NEG_INF = -np.inf


class InfeasibleTarget(Exception):
    """The target cannot be aligned to the available frames."""

    def __init__(self, message: str, frames: int = 0, labels: int = 0):
        super().__init__(message)
        self.frames = frames
        self.labels = labels


@dataclass
class CtcResult:
    loss: float  # +inf when infeasible
    occupancy: np.ndarray | None  # [T, V] posterior symbol occupancy
    feasible: bool


def _lse3(a, b, c):
    return np.logaddexp(np.logaddexp(a, b), c)


def ctc_forward_backward(logprobs: np.ndarray, y: Sequence[int], blank: int = 0) -> CtcResult:
    """Alpha/beta over the blank-interleaved label sequence, all in log space.

    ``logprobs`` is [T, V] and already normalized per frame. The returned
    occupancy is the expected count of each symbol at each frame under the
    alignment posterior; d loss / d logprobs = -occupancy.
    """
    logprobs = np.asarray(logprobs, dtype=np.float64)
    T, V = logprobs.shape
    y = list(y)
    if any(s == blank or not 0 <= s < V for s in y):
        raise ValueError(f"ctc: targets must be non-blank ids in [0, {V})")
    ext = np.full(2 * len(y) + 1, blank, dtype=np.int64)
    ext[1::2] = y
    S = ext.size
    if T == 0:
        return CtcResult(0.0 if not y else np.inf, np.zeros((0, V)) if not y else None, not y)
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = logprobs[:, ext]  # [T, S]
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    with np.errstate(invalid="ignore"):
        for t in range(1, T):
            prev = alpha[t - 1]
            s1 = np.full(S, NEG_INF)
            s1[1:] = prev[:-1]
            s2 = np.full(S, NEG_INF)
            s2[2:] = prev[:-2]
            s2[~skip] = NEG_INF
            alpha[t] = _lse3(prev, s1, s2) + emit[t]
        log_z = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
        if not np.isfinite(log_z):
            return CtcResult(np.inf, None, False)

        beta = np.full((T, S), NEG_INF)
        beta[T - 1, S - 1] = emit[T - 1, S - 1]
        if S > 1:
            beta[T - 1, S - 2] = emit[T - 1, S - 2]
        skip_from = np.zeros(S, dtype=bool)
        skip_from[:-2] = skip[2:]
        for t in range(T - 2, -1, -1):
            nxt = beta[t + 1]
            s1 = np.full(S, NEG_INF)
            s1[:-1] = nxt[1:]
            s2 = np.full(S, NEG_INF)
            s2[:-2] = nxt[2:]
            s2[~skip_from] = NEG_INF
            beta[t] = _lse3(nxt, s1, s2) + emit[t]

        post = np.exp(alpha + beta - emit - log_z)
    occ = np.zeros((T, V))
    np.add.at(occ, (slice(None), ext), post)
    return CtcResult(float(-log_z), occ, True)


def ctc_loss(logits: ad.Tensor, y: Sequence[int], blank: int = 0) -> ad.Tensor:
    """Taped CTC loss over unnormalized frame scores ``logits`` [T, V].

    The DP is not taped; its gradient softmax(logits) - occupancy is fed back
    through the custom-gradient hook. Raises :class:`InfeasibleTarget` when no
    alignment exists.
    """
    if logits.ndim != 2:
        raise ad.ShapeError(f"ctc_loss: logits must be [T, V], got {logits.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logprobs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    res = ctc_forward_backward(logprobs, y, blank)
    if not res.feasible:
        raise InfeasibleTarget(f"ctc: {len(y)} labels cannot fit in {logits.shape[0]} frames",
                               logits.shape[0], len(y))
    grad = np.exp(logprobs) - res.occupancy
    return ad.custom("ctc_loss", (logits,), res.loss, lambda g: (g * grad,))


def ctc_greedy_decode(logits: np.ndarray | ad.Tensor, blank: int = 0) -> list[int]:
    """Per-frame argmax (ties go to the lowest id), then collapse."""
    data = logits.data if isinstance(logits, ad.Tensor) else np.asarray(logits)
    return collapse_ctc(np.argmax(data, axis=-1).tolist(), blank)
