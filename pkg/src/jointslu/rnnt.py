"""RNN-T loss over the (t, u) trellis, and greedy / beam decoders.

The loss consumes per-(t, u) log-probabilities, so it is agnostic to how the
joint network produced them (plain or gated).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

from . import autodiff as ad

NEG_INF = -np.inf


def rnnt_alpha_beta(jlp: np.ndarray, s: Sequence[int], blank: int = 0):
    """Forward and backward variables over the trellis, by anti-diagonal.

    ``alpha[t, u]`` is the log-probability of reaching node (t, u);
    ``beta[t, u]`` the log-probability of finishing from it, including the
    terminal blank at (T-1, U). Returns ``(alpha, beta, log_z)``.
    """
    jlp = np.asarray(jlp, dtype=np.float64)
    T, U1, V = jlp.shape
    U = U1 - 1
    if len(s) != U:
        raise ValueError(f"rnnt: target length {len(s)} does not match trellis extent {U1}")
    if T < 1:
        raise ValueError("rnnt: need at least one frame")
    lp_blank = jlp[:, :, blank]
    lp_emit = np.full((T, U1), NEG_INF)
    if U:
        lp_emit[:, :U] = jlp[:, np.arange(U), np.asarray(s, dtype=np.int64)]

    alpha = np.full((T, U1), NEG_INF)
    alpha[0, 0] = 0.0
    for n in range(1, T + U):
        ts = np.arange(max(0, n - U), min(T - 1, n) + 1)
        us = n - ts
        a = np.full(ts.size, NEG_INF)
        m = ts > 0
        a[m] = alpha[ts[m] - 1, us[m]] + lp_blank[ts[m] - 1, us[m]]
        m = us > 0
        a[m] = np.logaddexp(a[m], alpha[ts[m], us[m] - 1] + lp_emit[ts[m], us[m] - 1])
        alpha[ts, us] = a
    log_z = alpha[T - 1, U] + lp_blank[T - 1, U]

    beta = np.full((T, U1), NEG_INF)
    beta[T - 1, U] = lp_blank[T - 1, U]
    for n in range(T + U - 2, -1, -1):
        ts = np.arange(max(0, n - U), min(T - 1, n) + 1)
        us = n - ts
        b = np.full(ts.size, NEG_INF)
        m = ts < T - 1
        b[m] = beta[ts[m] + 1, us[m]] + lp_blank[ts[m], us[m]]
        m = us < U
        b[m] = np.logaddexp(b[m], beta[ts[m], us[m] + 1] + lp_emit[ts[m], us[m]])
        beta[ts, us] = b
    return alpha, beta, float(log_z)


def rnnt_nll(jlp: np.ndarray, s: Sequence[int], blank: int = 0) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to ``jlp`` (negative transition posteriors)."""
    jlp = np.asarray(jlp, dtype=np.float64)
    alpha, beta, log_z = rnnt_alpha_beta(jlp, s, blank)
    T, U1, _ = jlp.shape
    U = U1 - 1
    grad = np.zeros_like(jlp)
    nxt = np.full((T, U1), NEG_INF)
    nxt[:-1] = beta[1:]
    nxt[T - 1, U] = 0.0
    grad[:, :, blank] = -np.exp(alpha + jlp[:, :, blank] + nxt - log_z)
    if U:
        idx = np.asarray(s, dtype=np.int64)
        cols = np.arange(U)
        emit = jlp[:, cols, idx]
        grad[:, cols, idx] = -np.exp(alpha[:, :U] + emit + beta[:, 1:] - log_z)
    return -log_z, grad


def rnnt_loss(jlp: ad.Tensor, s: Sequence[int], blank: int = 0) -> ad.Tensor:
    """Taped RNN-T loss over joint log-probabilities [T, U+1, V]."""
    if jlp.ndim != 3:
        raise ad.ShapeError(f"rnnt_loss: expected [T, U+1, V], got {jlp.shape}")
    loss, grad = rnnt_nll(jlp.data, s, blank)
    return ad.custom("rnnt_loss", (jlp,), loss, lambda g: (g * grad,))


# ---------------------------------------------------------------- decoding


class Scorer(Protocol):
    """What a decoder needs from a model bound to one encoder output."""

    frames: int
    blank: int

    def start(self) -> tuple[np.ndarray, Any]: ...

    def step(self, state: Any, symbol: int) -> tuple[np.ndarray, Any]: ...

    def joint(self, t: int, g: np.ndarray) -> np.ndarray: ...


class Transducer(Protocol):
    def bind(self, H: np.ndarray) -> Scorer: ...


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    alignment: tuple[int, ...] = ()


def rnnt_greedy_decode(model: Transducer, H, max_symbols_per_frame: int = 5) -> Hypothesis:
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    sc = model.bind(H.data if isinstance(H, ad.Tensor) else H)
    g, state = sc.start()
    tokens: list[int] = []
    path: list[int] = []
    score = 0.0
    for t in range(sc.frames):
        emitted = 0
        while True:
            lp = sc.joint(t, g)
            k = int(np.argmax(lp))
            if k == sc.blank or emitted >= max_symbols_per_frame:
                score += float(lp[sc.blank])
                path.append(sc.blank)
                break
            score += float(lp[k])
            tokens.append(k)
            path.append(k)
            g, state = sc.step(state, k)
            emitted += 1
    return Hypothesis(tuple(tokens), score, tuple(path))


@dataclass
class _Partial:
    score: float
    path: tuple[int, ...]
    tokens: tuple[int, ...]
    t: int
    emitted: int
    g: np.ndarray = field(repr=False)
    state: Any = field(repr=False)
    pending: int | None = None  # symbol whose prediction step is deferred


def rnnt_beam_decode(model: Transducer, H, beam: int = 4,
                     max_symbols_per_frame: int = 5) -> list[Hypothesis]:
    """N-best label sequences by single-alignment path score.

    Every hypothesis takes one decision (blank or a symbol) per step; the
    pooled extensions are cut to the ``beam`` best. With ``beam=1`` this is
    exactly the greedy decoder. The greedy path is always scored as a
    candidate, so the best returned score is never below greedy's.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    H = H.data if isinstance(H, ad.Tensor) else H
    sc = model.bind(H)
    blank = sc.blank
    g0, st0 = sc.start()
    active = [_Partial(0.0, (), (), 0, 0, g0, st0)]
    finished: list[_Partial] = []

    def key(p: _Partial):
        return (-p.score, p.path)

    while active:
        pool: list[_Partial] = []
        for h in active:
            if h.pending is not None:
                h.g, h.state = sc.step(h.state, h.pending)
                h.pending = None
            lp = sc.joint(h.t, h.g)
            pool.append(_Partial(h.score + float(lp[blank]), h.path + (blank,), h.tokens,
                                 h.t + 1, 0, h.g, h.state))
            if h.emitted < max_symbols_per_frame:
                for k in range(lp.size):
                    if k == blank:
                        continue
                    pool.append(_Partial(h.score + float(lp[k]), h.path + (k,), h.tokens + (k,),
                                         h.t, h.emitted + 1, h.g, h.state, pending=k))
        pool.sort(key=key)
        active = []
        for p in pool[:beam]:
            (finished if p.t >= sc.frames else active).append(p)
        finished.sort(key=key)
        finished = finished[:beam]
        if len(finished) >= beam:
            floor = finished[-1].score
            active = [p for p in active if p.score > floor]

    greedy = rnnt_greedy_decode(model, H, max_symbols_per_frame)
    best: dict[tuple[int, ...], Hypothesis] = {}
    for hyp in [Hypothesis(p.tokens, p.score, p.path) for p in finished] + [greedy]:
        cur = best.get(hyp.tokens)
        if cur is None or hyp.score > cur.score:
            best[hyp.tokens] = hyp
    return sorted(best.values(), key=lambda h: (-h.score, h.alignment))[:beam]

