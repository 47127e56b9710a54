"""WER and set-based SLU scoring (entity P/R/F1, intent accuracy)."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def wer(hyp: Sequence, ref: Sequence) -> float:
    """Levenshtein errors over reference length; an empty reference counts over 1."""
    if isinstance(hyp, str):
        hyp = hyp.split()
    if isinstance(ref, str):
        ref = ref.split()
    return edit_distance(hyp, ref) / max(len(ref), 1)


def corpus_wer(hyps: Sequence[str], refs: Sequence[str]) -> float:
    errs = sum(edit_distance(h.split(), r.split()) for h, r in zip(hyps, refs))
    return errs / max(sum(len(r.split()) for r in refs), 1)


@dataclass
class EntitySet:
    intent: str | None
    entities: Counter = field(default_factory=Counter)  # (slot type, value) -> count
    malformed: int = 0


def parse_tag(symbols: Sequence[str]) -> EntitySet:
    """Read an intent-first SLU tag into an :class:`EntitySet`.

    ``IN-<name>`` symbols are intents and ``b-<name>`` symbols close a slot
    value; anything else is a value character. A trailing unclosed value, an
    empty value, or an intent token after the first position is dropped and
    counted as malformed.
    """
    rest = list(symbols)
    intent = rest.pop(0)[3:] if rest and rest[0].startswith("IN-") else None
    ents: Counter = Counter()
    bad = 0
    value: list[str] = []
    for s in rest:
        if s.startswith("b-"):
            if value:
                ents[(s[2:], "".join(value))] += 1
            else:
                bad += 1
            value = []
        elif s.startswith("IN-"):
            bad += 1
        else:
            value.append(s)
    if value:
        bad += 1
    return EntitySet(intent, ents, bad)


def reference_set(intent: str, entities) -> EntitySet:
    return EntitySet(intent, Counter(tuple(e) for e in entities))


@dataclass
class SluScores:
    precision: float
    recall: float
    slu_f1: float
    intent_acc: float

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "slu_f1": self.slu_f1, "intent_acc": self.intent_acc}


def slu_scores(hyps: Sequence[EntitySet], refs: Sequence[EntitySet]) -> SluScores:
    """Micro-averaged multiset matching on (type, value) pairs."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses for {len(refs)} references")
    tp = nh = nr = correct = 0
    for h, r in zip(hyps, refs):
        tp += sum((h.entities & r.entities).values())
        nh += sum(h.entities.values())
        nr += sum(r.entities.values())
        correct += h.intent == r.intent
    p = tp / nh if nh else (1.0 if nr == 0 else 0.0)
    rc = tp / nr if nr else (1.0 if nh == 0 else 0.0)
    f1 = 2 * p * rc / (p + rc) if p + rc > 0 else 0.0
    acc = correct / len(refs) if refs else 1.0
    return SluScores(p, rc, f1, acc)
