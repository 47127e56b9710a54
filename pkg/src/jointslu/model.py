"""The joint ASR+SLU transducer: encoder, prediction net, joint, KT pool, BOE head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datasynth import Grammar, Utterance
from .encoder import Encoder, EncoderConfig, EncoderState
from .kt import CLS, AttentionPool, cls_query
from .lattice import Vocab
from .params import ParamStore
from .sluhead import JointNet, PredictionNet, SluHeadConfig, boe_head, boe_target, gate_aux


@dataclass
class ModelSpec:
    """Everything needed to rebuild a model's parameter layout."""

    vocab: Vocab
    boe_labels: list[str]
    encoder: EncoderConfig
    sluhead: SluHeadConfig
    kt_width: int = 32

    @classmethod
    def from_grammar(cls, grammar: Grammar, encoder: EncoderConfig, sluhead: SluHeadConfig,
                     kt_width: int = 32) -> "ModelSpec":
        return cls(grammar.vocab(), grammar.boe_labels, encoder, sluhead, kt_width)


class JointSLUModel:
    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        self.vocab = spec.vocab
        self.params = ParamStore(seed)
        self.char_ids = self.vocab.ids_of_kind("char")
        if self.char_ids != list(range(1, len(self.char_ids) + 1)):
            raise ValueError("characters must occupy ids 1..n right after the blank")
        widths = [len(self.char_ids) + 1 if k == "asr" else len(self.vocab) for k in spec.encoder.sctc_targets]
        self.encoder = Encoder(spec.encoder, widths, self.params)
        self.pred = PredictionNet(self.params, len(self.vocab), spec.sluhead, start_id=self.vocab.blank_id)
        self.joint = JointNet(self.params, spec.encoder.d_model, spec.sluhead.pred_dim, spec.sluhead.joint_dim,
                              len(self.vocab), len(spec.boe_labels), spec.kt_width)
        self.kt_tokens = [CLS] + [self.vocab.symbols[i] for i in self.char_ids]
        self.pool = AttentionPool(self.params, self.kt_tokens, spec.encoder.d_model, spec.kt_width)
        self.boe_index = {b: i for i, b in enumerate(spec.boe_labels)}
        # decoding mode, set by the SLU-adaptation stage that trained the model
        self.joint_mode = "plain"
        self.use_boe = True
        self.use_cls = True

    # ------------------------------------------------------------ targets

    def asr_targets(self, u: Utterance) -> list[int]:
        return self.vocab.encode(list(u.text))

    def slu_targets(self, u: Utterance) -> list[int]:
        return self.vocab.encode(u.tag_symbols())

    def head_targets(self, u: Utterance) -> list[list[int]]:
        return [self.asr_targets(u) if k == "asr" else self.slu_targets(u)
                for k in self.spec.encoder.sctc_targets]

    def boe_target(self, u: Utterance) -> np.ndarray:
        return boe_target([self.boe_index[b] for b in u.boe_labels()], len(self.boe_index))

    # ------------------------------------------------------------ forward pieces

    def encode(self, frames) -> EncoderState:
        return self.encoder.encode(frames)

    def utterance_aux(self, H: ad.Tensor):
        """x_[CLS] and log P_BOE for one encoder output."""
        x_cls = cls_query(self.pool, H)
        return x_cls, boe_head(x_cls, self.params)

    # ------------------------------------------------------------ decoding

    def bind(self, H: np.ndarray) -> "_Scorer":
        return _Scorer(self, np.asarray(H, dtype=np.float64))

    def tag_of(self, ids) -> list[str]:
        return self.vocab.decode(ids)


class _Scorer:
    """Forward-only per-step joint evaluation for the decoders."""

    def __init__(self, model: JointSLUModel, H: np.ndarray):
        p = model.params.arrays()
        self.m = model
        self.p = p
        self.frames = H.shape[0]
        self.blank = model.vocab.blank_id
        self.enc = H @ p["joint.W_enc"].T
        self.aux = None
        if model.joint_mode == "gated" and self.frames:
            with ad.no_tape():
                Ht = ad.Tensor(H)
                x_cls, log_p = model.utterance_aux(Ht)
                aux = gate_aux(ad.Tensor(np.exp(log_p.data)) if model.use_boe else None,
                               x_cls if model.use_cls else None, model.params)
            if aux is not None:
                self.aux = aux.data
                self.gate_h = H @ p["gate.W_h"].T

    def start(self):
        return self.m.pred.start()

    def step(self, state, symbol: int):
        return self.m.pred.step(state, symbol)

    def joint(self, t: int, g: np.ndarray) -> np.ndarray:
        p = self.p
        z = self.enc[t] + p["joint.W_pred"] @ g + p["joint.b"]
        if self.aux is not None:
            gate = 0.5 * (1.0 + np.tanh(0.5 * (self.gate_h[t] + p["gate.W_g"] @ g + p["gate.b"])))
            z = z + gate * self.aux
        logits = p["joint.W_out"] @ np.tanh(z)
        m = logits.max()
        return logits - m - np.log(np.exp(logits - m).sum())
