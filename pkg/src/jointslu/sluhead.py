"""Prediction network, plain and gated joint networks, bag-of-entities head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .encoder import linear
from .params import ParamStore


@dataclass
class SluHeadConfig:
    pred_dim: int = 48
    embed_dim: int = 32
    joint_dim: int = 32
    max_symbols_per_frame: int = 5


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_step(x, h, c, W, R, b):
    """One LSTM step on plain arrays. Gate order: input, forget, cell, output."""
    p = h.shape[-1]
    a = W @ x + R @ h + b
    i, f, o = _sigmoid(a[:p]), _sigmoid(a[p:2 * p]), _sigmoid(a[3 * p:])
    gg = np.tanh(a[2 * p:3 * p])
    c = f * c + i * gg
    return o * np.tanh(c), c


def lstm_sequence(x: ad.Tensor, W: ad.Tensor, R: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Run an LSTM from zero state over rows of ``x``; one fused tape node.

    Backward is truncation-free BPTT computed from saved gate activations.
    """
    n, _ = x.shape
    p = R.shape[1]
    if W.shape[0] != 4 * p or R.shape != (4 * p, p) or b.shape != (4 * p,) or W.shape[1] != x.shape[1]:
        raise ad.ShapeError(f"lstm: input {x.shape} incompatible with W {W.shape}, R {R.shape}")
    xs = x.data @ W.data.T + b.data
    hs = np.zeros((n + 1, p))
    cs = np.zeros((n + 1, p))
    gates = np.zeros((n, 4 * p))
    for t in range(n):
        a = xs[t] + R.data @ hs[t]
        g = np.empty(4 * p)
        g[:2 * p] = _sigmoid(a[:2 * p])
        g[2 * p:3 * p] = np.tanh(a[2 * p:3 * p])
        g[3 * p:] = _sigmoid(a[3 * p:])
        gates[t] = g
        cs[t + 1] = g[p:2 * p] * cs[t] + g[:p] * g[2 * p:3 * p]
        hs[t + 1] = g[3 * p:] * np.tanh(cs[t + 1])

    def grad(gh):
        da = np.zeros((n, 4 * p))
        dh_next = np.zeros(p)
        dc_next = np.zeros(p)
        for t in range(n - 1, -1, -1):
            i, f, gg, o = gates[t, :p], gates[t, p:2 * p], gates[t, 2 * p:3 * p], gates[t, 3 * p:]
            dh = gh[t] + dh_next
            tc = np.tanh(cs[t + 1])
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da[t, :p] = dc * gg * i * (1.0 - i)
            da[t, p:2 * p] = dc * cs[t] * f * (1.0 - f)
            da[t, 2 * p:3 * p] = dc * i * (1.0 - gg * gg)
            da[t, 3 * p:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = R.data.T @ da[t]
        return da @ W.data, da.T @ x.data, da.T @ hs[:-1], da.sum(axis=0)

    return ad.custom("lstm", (x, W, R, b), hs[1:], grad)


class PredictionNet:
    """Single-layer LSTM over ``[start] + targets``; row u is g_u."""

    def __init__(self, params: ParamStore, vocab_size: int, cfg: SluHeadConfig, start_id: int = 0):
        self.p = params
        self.start_id = start_id
        self.dim = cfg.pred_dim
        params.get_or_create("pred.emb", (vocab_size, cfg.embed_dim), "normal")
        params.get_or_create("pred.W", (4 * cfg.pred_dim, cfg.embed_dim))
        params.get_or_create("pred.R", (4 * cfg.pred_dim, cfg.pred_dim))
        b = np.zeros(4 * cfg.pred_dim)
        b[cfg.pred_dim:2 * cfg.pred_dim] = 1.0  # forget-gate bias
        if "pred.b" not in params:
            params.add("pred.b", b)

    def __call__(self, targets: Sequence[int]) -> ad.Tensor:
        p = self.p
        x = ad.embedding(p["pred.emb"], [self.start_id] + list(targets))
        return lstm_sequence(x, p["pred.W"], p["pred.R"], p["pred.b"])

    def start(self):
        z = np.zeros(self.dim)
        return self.step((z, z), self.start_id)

    def step(self, state, symbol: int):
        p = self.p
        h, c = lstm_step(p["pred.emb"].data[symbol], state[0], state[1],
                         p["pred.W"].data, p["pred.R"].data, p["pred.b"].data)
        return h, (h, c)


class JointNet:
    """Plain joint network and the gated variant conditioned on BOE and [CLS]."""

    def __init__(self, params: ParamStore, d_model: int, pred_dim: int, joint_dim: int,
                 vocab_size: int, boe_size: int, cls_dim: int):
        self.p = params
        j = joint_dim
        params.get_or_create("joint.W_enc", (j, d_model))
        params.get_or_create("joint.W_pred", (j, pred_dim))
        params.get_or_create("joint.b", (j,), "zeros")
        params.get_or_create("joint.W_out", (vocab_size, j))
        params.get_or_create("gate.W_h", (j, d_model))
        params.get_or_create("gate.W_g", (j, pred_dim))
        params.get_or_create("gate.b", (j,), "zeros")
        params.get_or_create("gate.W_b", (j, boe_size))
        params.get_or_create("gate.W_c", (j, cls_dim))
        params.get_or_create("boe.W", (boe_size, cls_dim))
        params.get_or_create("boe.b", (boe_size,), "zeros")


def _outer_sum(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """[T, j] and [U, j] -> [T, U, j] with entry (t, u) = a_t + b_u."""
    T, j = a.shape
    U = b.shape[0]
    return ad.add(ad.broadcast_to(ad.reshape(a, (T, 1, j)), (T, U, j)),
                  ad.broadcast_to(ad.reshape(b, (1, U, j)), (T, U, j)))


def _project_out(z: ad.Tensor, W_out: ad.Tensor) -> ad.Tensor:
    T, U, j = z.shape
    logits = ad.matmul(ad.reshape(ad.tanh(z), (T * U, j)), ad.transpose(W_out))
    return ad.reshape(ad.log_softmax(logits), (T, U, W_out.shape[0]))


def joint_plain(H: ad.Tensor, G: ad.Tensor, params: ParamStore) -> ad.Tensor:
    """log Softmax(W_out tanh(W_enc h_t + W_pred g_u + b)) for every (t, u)."""
    p = params
    z = _outer_sum(linear(H, p["joint.W_enc"]), linear(G, p["joint.W_pred"], p["joint.b"]))
    return _project_out(z, p["joint.W_out"])


def gate_aux(p_boe: ad.Tensor | None, x_cls: ad.Tensor | None, params: ParamStore) -> ad.Tensor | None:
    """W_b P_BOE + W_c x_cls; either input may be absent."""
    terms = []
    if p_boe is not None:
        terms.append(ad.matmul(params["gate.W_b"], ad.reshape(p_boe, (-1, 1))))
    if x_cls is not None:
        terms.append(ad.matmul(params["gate.W_c"], ad.reshape(x_cls, (-1, 1))))
    if not terms:
        return None
    aux = terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])
    return ad.reshape(aux, (aux.shape[0],))


def joint_gated(H: ad.Tensor, G: ad.Tensor, p_boe: ad.Tensor | None, x_cls: ad.Tensor | None,
                params: ParamStore) -> ad.Tensor:
    """Joint network with the position-dependent gate

    gamma = sigmoid(W_h h_t + W_g g_u + b') * (W_b P_BOE + W_c x_cls)

    added inside the tanh. With W_b = W_c = 0 the output equals
    :func:`joint_plain` exactly.
    """
    p = params
    z = _outer_sum(linear(H, p["joint.W_enc"]), linear(G, p["joint.W_pred"], p["joint.b"]))
    aux = gate_aux(p_boe, x_cls, p)
    if aux is not None:
        gate = ad.sigmoid(_outer_sum(linear(H, p["gate.W_h"]), linear(G, p["gate.W_g"], p["gate.b"])))
        z = ad.add(z, ad.mul(gate, ad.broadcast_to(aux, gate.shape)))
    return _project_out(z, p["joint.W_out"])


def boe_head(x_cls: ad.Tensor, params: ParamStore) -> ad.Tensor:
    """log P_BOE = log Softmax(Linear(x_cls)), shape [|V_BOE|]."""
    logits = ad.add(ad.reshape(ad.matmul(params["boe.W"], ad.reshape(x_cls, (-1, 1))), (-1,)), params["boe.b"])
    return ad.log_softmax(logits)


def boe_loss(log_p_boe: ad.Tensor, target) -> ad.Tensor:
    """Soft-target cross-entropy against an L1-normalized multi-hot target."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != log_p_boe.shape:
        raise ad.ShapeError(f"boe_loss: shapes {log_p_boe.shape} and {target.shape} do not conform")
    if (target < 0).any() or abs(target.sum() - 1.0) > 1e-12:
        raise ValueError("BOE target must be non-negative and sum to 1")
    return ad.neg(ad.reduce_sum(ad.mul(log_p_boe, ad.Tensor(target))))


def boe_target(labels: Sequence[int], size: int) -> np.ndarray:
    """L1-normalized multi-hot over the BOE inventory (duplicates count once)."""
    v = np.zeros(size)
    v[sorted(set(labels))] = 1.0
    if v.sum() == 0:
        raise ValueError("empty entity set")
    return v / v.sum()
