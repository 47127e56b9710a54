"""Command-line entry point: synth, verify, train, decode, eval, ablate, align-dump.

Exit codes: 0 success, 1 validation error, 2 verification failure, 3 divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import ConfigError, RunConfig
from .ctc import InfeasibleTarget
from .datasynth import generate_splits, read_corpus, write_corpus
from .kt import tokenize
from .metrics import corpus_wer, parse_tag, reference_set, slu_scores
from .pipeline import (Divergence, ablation_matrix, build_grammar, decode_utterance, load_model, summarize_ablation,
                       train)
from .rnnt import rnnt_alpha_beta
from .sluhead import joint_gated, joint_plain

log = logging.getLogger("jointslu")

EXIT_OK, EXIT_INVALID, EXIT_VERIFY, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _corpus(path: str, split: str):
    manifest, splits = read_corpus(path)
    if split not in splits:
        raise UsageError(f"{path}: no split {split!r} (have {sorted(splits)})")
    return manifest, splits[split]


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    grammar = build_grammar(cfg)
    splits = generate_splits(grammar, cfg.grammar.sizes, cfg.seed)
    out = write_corpus(args.out, splits, grammar, cfg.digest(), args.frames)
    print(json.dumps({"corpus": str(out), "config_hash": cfg.digest(),
                      "sizes": {k: len(v) for k, v in splits.items()}}))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import format_table, run_suite

    checks = run_suite(args.suite)
    print(format_table(checks))
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.stage is not None and not 0 <= args.stage < len(cfg.stages):
        raise UsageError(f"--stage {args.stage} out of range for {len(cfg.stages)} configured stages")
    stages = [args.stage] if args.stage is not None else None
    model, record = train(cfg, out_dir=_out_dir(args.out), stages=stages, init=args.init)
    last = record.lines[-1] if record.lines else {}
    print(json.dumps({"out": args.out, "config_hash": cfg.digest(), "final": last}))
    return EXIT_OK


def _hyp_record(model, cfg_hash: str, u, mode: str, beam: int) -> dict:
    st, hyps = decode_utterance(model, u, mode, beam)
    asr = [i for i, k in enumerate(model.spec.encoder.sctc_targets) if k == "asr"]
    text = None
    if asr:
        from .ctc import ctc_greedy_decode
        text = "".join(model.vocab.decode(ctc_greedy_decode(st.head_logits[asr[-1]].data, model.vocab.blank_id)))
    best = hyps[0]
    return {"id": u.id, "tags": model.tag_of(best.tokens), "score": best.score, "text": text,
            "nbest": [{"tags": model.tag_of(h.tokens), "score": h.score} for h in hyps[1:]],
            "config_hash": cfg_hash, "vocab_hash": model.vocab.digest()}


def cmd_decode(args) -> int:
    if args.beam < 1:
        raise UsageError("--beam must be >= 1")
    model, cfg, meta = load_model(args.ckpt)
    manifest, utts = _corpus(args.data, args.split)
    if manifest["vocab_hash"] != model.vocab.digest():
        raise UsageError("corpus and checkpoint vocabularies differ")
    out = _out_dir(args.out) / "hyps.jsonl"
    with open(out, "w") as fh:
        for u in utts:
            fh.write(json.dumps(_hyp_record(model, meta["config_hash"], u, args.mode, args.beam)) + "\n")
    print(json.dumps({"hyps": str(out), "count": len(utts), "config_hash": meta["config_hash"]}))
    return EXIT_OK


def _read_records(path: str, split: str) -> tuple[list[dict], str | None, str | None]:
    """Records plus (vocab hash, config hash); corpus splits take both from the manifest."""
    p = Path(path)
    if p.is_dir():
        p = p / f"{split}.jsonl"
    if not p.exists():
        raise UsageError(f"{p}: no such file")
    recs = [json.loads(l) for l in p.read_text().splitlines() if l.strip()]
    vh = {r.get("vocab_hash") for r in recs} - {None}
    ch = {r.get("config_hash") for r in recs} - {None}
    if len(vh) > 1:
        raise UsageError(f"{p}: records disagree on vocab hash")
    manifest = p.parent / "manifest.json"
    if not vh and manifest.exists():
        m = json.loads(manifest.read_text())
        vh, ch = {m.get("vocab_hash")}, {m.get("config_hash")} - {None, ""}
    return recs, (vh.pop() if vh else None), (ch.pop() if len(ch) == 1 else None)


def _entity_set(rec: dict):
    if "tags" in rec:
        return parse_tag(rec["tags"])
    slu = rec["slu"]
    return reference_set(slu["intent"], [(e["type"], e["value"]) for e in slu["entities"]])


def cmd_eval(args) -> int:
    hyps, hv, hc = _read_records(args.hyp, args.split)
    refs, rv, _ = _read_records(args.ref, args.split)
    if hv is None or rv is None:
        raise UsageError("both hypothesis and reference files must carry a vocab hash")
    if hv != rv:
        raise UsageError(f"vocab hash mismatch: hyp {hv} vs ref {rv}")
    by_id = {r["id"]: r for r in hyps}
    missing = [r["id"] for r in refs if r["id"] not in by_id]
    if missing:
        raise UsageError(f"{len(missing)} reference ids have no hypothesis, e.g. {missing[0]}")
    pairs = [(by_id[r["id"]], r) for r in refs]
    scores = slu_scores([_entity_set(h) for h, _ in pairs], [_entity_set(r) for _, r in pairs]).as_dict()
    have_text = all(h.get("text") is not None for h, _ in pairs)
    scores["wer"] = corpus_wer([h["text"] for h, _ in pairs], [r["text"] for _, r in pairs]) if have_text else None
    scores["config_hash"] = hc
    scores["vocab_hash"] = hv
    text = json.dumps(scores, indent=2)
    if args.out:
        (_out_dir(args.out) / "metrics.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    grid = json.loads(Path(args.grid).read_text())
    if not isinstance(grid, list) or not all(isinstance(c, dict) and "name" in c for c in grid):
        raise UsageError("grid must be a JSON list of {name, override} objects")
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = ablation_matrix(cfg, grid, seeds, split=args.split)
    summary = summarize_ablation(rows)
    out = _out_dir(args.out) / "ablation.csv"
    cols = ["cell", "seed", "config_hash", "final_loss", "precision", "recall", "slu_f1", "intent_acc", "wer"]
    with open(out, "w", newline="") as fh:
        fh.write(f"# base_config_hash={cfg.digest()}\n")
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
        for name, m in summary.items():
            w.writerow({"cell": name, "seed": "mean", "config_hash": cfg.digest(), **m})
    print(json.dumps({"report": str(out), "summary": summary}, indent=2))
    return EXIT_OK


def _write_matrix(path: Path, matrix: np.ndarray, rows: list[str], cols: list[str], cfg_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        w = csv.writer(fh)
        w.writerow([""] + cols)
        for name, r in zip(rows, matrix):
            w.writerow([name] + [f"{v:.6g}" for v in r])


def alignment_matrices(model, u) -> dict[str, tuple[np.ndarray, list[str], list[str]]]:
    """Transducer emission posteriors over (t, u), last-head CTC posteriors, KT attention."""
    with ad.no_tape():
        st = model.encode(u.frames)
        s = model.slu_targets(u)
        G = model.pred(s)
        if model.joint_mode == "gated":
            x_cls, log_p = model.utterance_aux(st.H)
            jlp = joint_gated(st.H, G, ad.softmax(log_p) if model.use_boe else None,
                              x_cls if model.use_cls else None, model.params).data
        else:
            jlp = joint_plain(st.H, G, model.params).data
        alpha, beta, log_z = rnnt_alpha_beta(jlp, s, model.vocab.blank_id)
        T, U = len(st.H.data), len(s)
        emit = np.zeros((T, U))
        for i, k in enumerate(s):
            emit[:, i] = np.exp(alpha[:, i] + jlp[:, i, k] + beta[:, i + 1] - log_z)
        head = st.head_logits[-1].data
        post = np.exp(head - head.max(axis=1, keepdims=True))
        post /= post.sum(axis=1, keepdims=True)
        toks = tokenize(u.text)
        _, weights = model.pool.attend(toks, st.H)
    frames = [f"t{t}" for t in range(T)]
    tags = model.vocab.decode(s)
    head_syms = [model.vocab.symbols[i] for i in range(head.shape[1])]
    return {
        "rnnt_posteriors.csv": (emit, frames, tags),
        "ctc_posteriors.csv": (post, frames, head_syms),
        "kt_attention.csv": (weights.data, toks, frames),
    }


def cmd_align_dump(args) -> int:
    model, cfg, meta = load_model(args.ckpt)
    found = None
    for split in ("train", "dev", "test"):
        try:
            _, utts = _corpus(args.data, split)
        except UsageError:
            continue
        found = next((u for u in utts if u.id == args.utt), None)
        if found:
            break
    if found is None:
        raise UsageError(f"utterance {args.utt!r} not found in {args.data}")
    out = _out_dir(args.out)
    for name, (m, rows, cols) in alignment_matrices(model, found).items():
        _write_matrix(out / name, m, rows, cols, meta["config_hash"])
    print(json.dumps({"out": str(out), "utt": args.utt, "config_hash": meta["config_hash"]}))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jointslu", description="Joint ASR/SLU transducer toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", choices=["inline", "binary"], default="inline")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("verify", help="run self-check suites")
    p.add_argument("--suite", choices=["oracles", "grads", "identities", "all"], default="all")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("train", help="run configured training stages")
    p.add_argument("--config")
    p.add_argument("--stage", type=int)
    p.add_argument("--init")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="decode a corpus split to JSONL hypotheses")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--mode", choices=["greedy", "beam"], default="greedy")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("eval", help="score hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train a grid of config overrides and report metrics")
    p.add_argument("--config")
    p.add_argument("--grid", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("align-dump", help="write alignment matrices for one utterance")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--utt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_align_dump)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except Divergence as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ConfigError, InfeasibleTarget, ValueError, KeyError, FileNotFoundError,
            json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
