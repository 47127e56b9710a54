"""Composite losses, the staged training loop, evaluation and ablation grids."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .config import RunConfig, StagePlan, merge
from .ctc import InfeasibleTarget, ctc_greedy_decode
from .datasynth import Grammar, Utterance, generate_splits
from .encoder import sctc_loss
from .kt import SyntheticTeacher, FileTeacher, align_loss, tokenize
from .metrics import corpus_wer, parse_tag, reference_set, slu_scores
from .model import JointSLUModel, ModelSpec
from .params import load_checkpoint, save_checkpoint
from .rnnt import rnnt_beam_decode, rnnt_greedy_decode, rnnt_loss
from .sluhead import boe_loss, joint_gated, joint_plain

log = logging.getLogger(__name__)


class Divergence(RuntimeError):
    pass


@dataclass
class LossParts:
    total: ad.Tensor
    parts: dict[str, float] = field(default_factory=dict)
    used: int = 0
    skipped: int = 0


def _sum(terms: Sequence[ad.Tensor]) -> ad.Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


def _weighted(terms: list[tuple[float, ad.Tensor]]) -> ad.Tensor:
    return _sum([ad.scale(t, w) for w, t in terms])


def _finish(per_example: list[ad.Tensor], extra: list[tuple[float, ad.Tensor]], parts: dict,
            used: int, skipped: int) -> LossParts:
    if not per_example and not extra:
        raise InfeasibleTarget("every example in the batch was infeasible")
    terms = []
    if per_example:
        terms.append(ad.scale(_sum(per_example), 1.0 / len(per_example)))
    terms += [ad.scale(t, w) for w, t in extra]
    n = max(used, 1)
    return LossParts(_sum(terms), {k: v / n for k, v in parts.items()}, used, skipped)


def loss_jnt(model: JointSLUModel, batch: Sequence[Utterance], lam: float = 0.5) -> LossParts:
    """lam * RNN-T(SLU tags, plain joint) + (1 - lam) * SCTC, averaged over examples."""
    per, parts, skipped = [], {"rnnt_slu": 0.0, "sctc": 0.0}, 0
    for u in batch:
        st = model.encode(u.frames)
        try:
            sc = sctc_loss(st, model.head_targets(u))
        except InfeasibleTarget:
            skipped += 1
            continue
        G = model.pred(model.slu_targets(u))
        rn = rnnt_loss(joint_plain(st.H, G, model.params), model.slu_targets(u))
        parts["rnnt_slu"] += rn.item()
        parts["sctc"] += sc.item()
        per.append(_weighted([(lam, rn), (1.0 - lam, sc)]))
    return _finish(per, [], parts, len(per), skipped)


def loss_asr_kt(model: JointSLUModel, batch: Sequence[Utterance], teacher, lam: float = 0.5,
                alpha: float = 1.0, tau: float = 0.07) -> LossParts:
    """lam * RNN-T(transcript) + (1 - lam) * SCTC + alpha * ALIGN over the batch's rows."""
    per, bx, by = [], [], []
    parts, skipped = {"rnnt_asr": 0.0, "sctc": 0.0}, 0
    for u in batch:
        st = model.encode(u.frames)
        try:
            sc = sctc_loss(st, model.head_targets(u))
        except InfeasibleTarget:
            skipped += 1
            continue
        y = model.asr_targets(u)
        rn = rnnt_loss(joint_plain(st.H, model.pred(y), model.params), y)
        parts["rnnt_asr"] += rn.item()
        parts["sctc"] += sc.item()
        per.append(_weighted([(lam, rn), (1.0 - lam, sc)]))
        if alpha:
            toks = tokenize(u.text)
            rows = teacher.embed(toks, u.id)
            if rows is None or rows.shape[0] != len(toks):
                raise ValueError(f"missing teacher rows for {u.id}")
            bx.append(model.pool.attend(toks, st.H)[0])
            by.append(rows)
    extra = []
    if alpha and bx:
        al = align_loss(ad.concat(bx, 0), np.concatenate(by, 0), tau)
        extra.append((alpha, al))
    out = _finish(per, extra, parts, len(per), skipped)
    if extra:
        out.parts["align"] = extra[0][1].item()
    return out


def loss_jnt_kt(model: JointSLUModel, batch: Sequence[Utterance], lam: float = 0.5, beta: float = 0.1,
                use_boe: bool = True, use_cls: bool = True, teacher_forcing: bool = False) -> LossParts:
    """lam * RNN-T(SLU tags, gated joint) + (1 - lam) * SCTC + beta * BOE."""
    per, parts, skipped = [], {"rnnt_slu": 0.0, "sctc": 0.0, "boe": 0.0}, 0
    for u in batch:
        st = model.encode(u.frames)
        try:
            sc = sctc_loss(st, model.head_targets(u))
        except InfeasibleTarget:
            skipped += 1
            continue
        x_cls, log_p = model.utterance_aux(st.H)
        target = model.boe_target(u)
        p_boe = None
        if use_boe:
            p_boe = ad.Tensor(target) if teacher_forcing else ad.softmax(ad.reshape(log_p, (-1,)))
        s = model.slu_targets(u)
        rn = rnnt_loss(joint_gated(st.H, model.pred(s), p_boe, x_cls if use_cls else None, model.params), s)
        terms = [(lam, rn), (1.0 - lam, sc)]
        parts["rnnt_slu"] += rn.item()
        parts["sctc"] += sc.item()
        if use_boe and beta:
            bl = boe_loss(log_p, target)
            parts["boe"] += bl.item()
            terms.append((beta, bl))
        per.append(_weighted(terms))
    return _finish(per, [], parts, len(per), skipped)


def stage_loss(model: JointSLUModel, plan: StagePlan, batch, teacher=None) -> LossParts:
    if plan.kind == "asr_pretrain":
        return loss_asr_kt(model, batch, teacher, plan.lam, 0.0, plan.tau)
    if plan.kind == "asr_finetune_kt":
        return loss_asr_kt(model, batch, teacher, plan.lam, plan.alpha, plan.tau)
    if plan.kind == "slu_adapt":
        return loss_jnt(model, batch, plan.lam)
    return loss_jnt_kt(model, batch, plan.lam, plan.beta, plan.use_boe, plan.use_cls, plan.boe_teacher_forcing)


# ---------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params, lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8, clip: float | None = 5.0):
        self.params = params
        self.lr, self.b1, self.b2, self.eps, self.clip = lr, b1, b2, eps, clip
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        factor = self.clip / norm if self.clip and norm > self.clip else 1.0
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, t in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            g = g * factor
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            t.data = t.data - self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
        return norm


def named_grads(model: JointSLUModel, loss: ad.Tensor) -> dict[str, np.ndarray]:
    leaf = ad.backward(loss)
    return {name: leaf[t] for name, t in model.params.items() if t in leaf}


# ---------------------------------------------------------------- evaluation


def decode_utterance(model: JointSLUModel, u: Utterance, mode: str = "greedy", beam: int = 4):
    with ad.no_tape():
        st = model.encode(u.frames)
    cap = model.spec.sluhead.max_symbols_per_frame
    if mode == "greedy":
        hyps = [rnnt_greedy_decode(model, st.H.data, cap)]
    else:
        hyps = rnnt_beam_decode(model, st.H.data, beam, cap)
    return st, hyps


def evaluate(model: JointSLUModel, utts: Sequence[Utterance], mode: str = "greedy", beam: int = 4) -> dict:
    hyp_sets, ref_sets, asr_h, asr_r = [], [], [], []
    asr_heads = [i for i, k in enumerate(model.spec.encoder.sctc_targets) if k == "asr"]
    for u in utts:
        st, hyps = decode_utterance(model, u, mode, beam)
        hyp_sets.append(parse_tag(model.tag_of(hyps[0].tokens)))
        ref_sets.append(reference_set(u.intent, u.entities))
        if asr_heads:
            ids = ctc_greedy_decode(st.head_logits[asr_heads[-1]].data, model.vocab.blank_id)
            asr_h.append("".join(model.vocab.decode(ids)))
            asr_r.append(u.text)
    out = slu_scores(hyp_sets, ref_sets).as_dict()
    out["wer"] = corpus_wer(asr_h, asr_r) if asr_heads else None
    return out


# ---------------------------------------------------------------- training


@dataclass
class RunRecord:
    lines: list[dict] = field(default_factory=list)

    def add(self, **kw) -> dict:
        self.lines.append(kw)
        return kw

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for line in self.lines:
                fh.write(json.dumps(line, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "RunRecord":
        return cls([json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()])


def make_teacher(cfg: RunConfig):
    if cfg.kt.teacher == "file":
        if not cfg.kt.teacher_file:
            raise ValueError("kt.teacher_file is required for the file teacher")
        return FileTeacher.load(cfg.kt.teacher_file)
    return SyntheticTeacher(cfg.kt.width, cfg.kt.teacher_seed)


def build_grammar(cfg: RunConfig) -> Grammar:
    g = cfg.grammar
    return Grammar(noise=g.noise, carrier_prob=g.carrier_prob, frame_width=g.frame_width)


def build_model(cfg: RunConfig, grammar: Grammar | None = None) -> JointSLUModel:
    grammar = grammar or build_grammar(cfg)
    if cfg.encoder.input_dim != grammar.frame_width:
        raise ValueError(f"encoder.input_dim {cfg.encoder.input_dim} != frame width {grammar.frame_width}")
    spec = ModelSpec.from_grammar(grammar, cfg.encoder, cfg.sluhead, cfg.kt.width)
    return JointSLUModel(spec, cfg.seed)


def train_stage(model: JointSLUModel, plan: StagePlan, train: Sequence[Utterance],
                dev: Sequence[Utterance] = (), teacher=None, record: RunRecord | None = None,
                config_hash: str = "", stage_index: int = 0,
                on_epoch: Callable[[dict], None] | None = None) -> RunRecord:
    """Adam over all parameters, fixed-seed shuffling, one record line per epoch."""
    record = record if record is not None else RunRecord()
    if plan.kind == "slu_adapt_kt":
        model.joint_mode, model.use_boe, model.use_cls = "gated", plan.use_boe, plan.use_cls
    elif plan.kind == "slu_adapt":
        model.joint_mode = "plain"
    opt = Adam(model.params, plan.lr, clip=plan.clip)
    train = list(train)
    step = 0
    total_steps = plan.epochs * -(-len(train) // plan.batch_size)
    for epoch in range(plan.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([plan.seed, stage_index, epoch]).permutation(len(train))
        sums: dict[str, float] = {}
        losses, used, skipped = [], 0, 0
        for start in range(0, len(order), plan.batch_size):
            batch = [train[i] for i in order[start:start + plan.batch_size]]
            try:
                with ad.Tape():
                    lp = stage_loss(model, plan, batch, teacher)
                    grads = named_grads(model, lp.total)
            except InfeasibleTarget:
                skipped += len(batch)
                continue
            except ad.NonFiniteError as e:
                raise Divergence(f"stage {stage_index} ({plan.kind}) epoch {epoch} step {step}: {e}") from e
            if not np.isfinite(lp.total.item()):
                raise Divergence(f"stage {stage_index} ({plan.kind}) epoch {epoch} step {step}: loss is not finite")
            if plan.lr_schedule == "cosine":
                opt.lr = plan.lr * 0.5 * (1.0 + np.cos(np.pi * step / max(total_steps, 1)))
            opt.step(grads)
            step += 1
            losses.append(lp.total.item())
            used += lp.used
            skipped += lp.skipped
            for k, v in lp.parts.items():
                sums[k] = sums.get(k, 0.0) + v * lp.used
        line = {
            "stage": stage_index, "kind": plan.kind, "epoch": epoch, "steps": step,
            "loss": float(np.mean(losses)) if losses else None,
            "components": {k: v / max(used, 1) for k, v in sorted(sums.items())},
            "used": used, "skipped": skipped, "seed": plan.seed, "config_hash": config_hash,
        }
        last = epoch == plan.epochs - 1
        if dev and plan.kind.startswith("slu") and (last or (plan.eval_every and (epoch + 1) % plan.eval_every == 0)):
            line["dev"] = evaluate(model, dev)
        record.add(**line)
        log.info("stage %d epoch %d loss %.4f (%.1fs)", stage_index, epoch, line["loss"] or float("nan"),
                 time.perf_counter() - t0)
        if on_epoch:
            on_epoch(line)
    return record


def model_meta(model: JointSLUModel, cfg: RunConfig, stage: int) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "vocab": model.vocab.to_dict(),
        "vocab_hash": model.vocab.digest(),
        "boe_labels": model.spec.boe_labels,
        "joint_mode": model.joint_mode,
        "use_boe": model.use_boe,
        "use_cls": model.use_cls,
        "stage": stage,
    }


def save_model(model: JointSLUModel, cfg: RunConfig, path: str | Path, stage: int) -> None:
    save_checkpoint(path, model.params.arrays(), model_meta(model, cfg, stage))


def load_model(path: str | Path) -> tuple[JointSLUModel, RunConfig, dict]:
    arrays, meta = load_checkpoint(path)
    cfg = RunConfig.from_dict(meta["config"])
    model = build_model(cfg)
    if model.vocab.digest() != meta["vocab_hash"]:
        raise ValueError(f"{path}: vocabulary hash mismatch")
    model.params.load_arrays(arrays)
    model.joint_mode = meta.get("joint_mode", "plain")
    model.use_boe = meta.get("use_boe", True)
    model.use_cls = meta.get("use_cls", True)
    return model, cfg, meta


def load_data(cfg: RunConfig, grammar: Grammar | None = None) -> dict[str, list[Utterance]]:
    if cfg.paths.corpus:
        from .datasynth import read_corpus
        _, splits = read_corpus(cfg.paths.corpus)
        return splits
    return generate_splits(grammar or build_grammar(cfg), cfg.grammar.sizes, cfg.seed)


def train(cfg: RunConfig, data: dict[str, list[Utterance]] | None = None, out_dir: str | Path | None = None,
          stages: Sequence[int] | None = None, init: str | Path | None = None,
          model: JointSLUModel | None = None) -> tuple[JointSLUModel, RunRecord]:
    """Run the configured stage chain; one checkpoint per stage when ``out_dir`` is set."""
    grammar = build_grammar(cfg)
    data = data if data is not None else load_data(cfg, grammar)
    if model is None:
        model = build_model(cfg, grammar)
        if init:
            arrays, meta = load_checkpoint(init)
            if meta.get("vocab_hash") != model.vocab.digest():
                raise ValueError(f"{init}: vocabulary hash mismatch")
            model.params.load_arrays(arrays)
            model.joint_mode = meta.get("joint_mode", "plain")
    teacher = make_teacher(cfg)
    record = RunRecord()
    chash = cfg.digest()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for i in stages if stages is not None else range(len(cfg.stages)):
        plan = cfg.stages[i]
        train_stage(model, plan, data["train"], data.get("dev", ()), teacher, record, chash, i)
        if out:
            save_model(model, cfg, out / f"stage{i}.ckpt", i)
    if out:
        record.write(out / "run.jsonl")
    return model, record


# ---------------------------------------------------------------- ablations


def ablation_matrix(cfg: RunConfig, grid: Sequence[dict], seeds: Sequence[int] = (0,),
                    data: dict[str, list[Utterance]] | None = None, split: str = "test") -> list[dict]:
    """One training run per (cell, seed); cells are config overrides.

    A cell is ``{"name": ..., "override": {...}}``; the override is merged
    into the base config dict. The data is shared across cells.
    """
    base = cfg.to_dict()
    grammar = build_grammar(cfg)
    data = data if data is not None else load_data(cfg, grammar)
    rows = []
    for cell in grid:
        for seed in seeds:
            d = merge(base, cell.get("override", {}))
            d["seed"] = seed
            for st in d["stages"]:
                st["seed"] = seed
            run_cfg = RunConfig.from_dict(d)
            model, rec = train(run_cfg, data)
            metrics = evaluate(model, data[split])
            rows.append({"cell": cell["name"], "seed": seed, "config_hash": run_cfg.digest(),
                         "final_loss": rec.lines[-1]["loss"] if rec.lines else None, **metrics})
    return rows


def summarize_ablation(rows: list[dict]) -> dict[str, dict[str, float]]:
    cells: dict[str, list[dict]] = {}
    for r in rows:
        cells.setdefault(r["cell"], []).append(r)
    return {name: {k: float(np.mean([r[k] for r in rs])) for k in ("precision", "recall", "slu_f1", "intent_acc")}
            for name, rs in cells.items()}
