"""Vocabularies, collapsing functions and brute-force alignment enumerators.

The enumerators are exponential and exist to check the DP losses exactly on
tiny instances; they refuse anything beyond oracle scale.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

BLANK = "<b>"

CTC_MAX_FRAMES = 10
CTC_MAX_LABELS = 5
RNNT_MAX_FRAMES = 8
RNNT_MAX_LABELS = 4


class OracleScaleError(ValueError):
    pass


@dataclass
class Vocab:
    """Ordered symbol inventory with the blank at ``blank_id``.

    ``kinds`` flags each symbol as ``"blank"``, ``"char"``, ``"intent"`` or
    ``"slot"``; SLU labels are ordinary symbols otherwise.
    """

    symbols: list[str]
    blank_id: int = 0
    kinds: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocab symbols must be unique")
        if not 0 <= self.blank_id < len(self.symbols):
            raise ValueError(f"blank_id {self.blank_id} out of range")
        if not self.kinds:
            self.kinds = ["char"] * len(self.symbols)
        self.kinds[self.blank_id] = "blank"
        self._index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def id(self, symbol: str) -> int:
        return self._index[symbol]

    def encode(self, symbols: Sequence[str]) -> list[int]:
        ids = []
        for s in symbols:
            if s not in self._index:
                raise KeyError(f"symbol {s!r} not in vocab")
            i = self._index[s]
            if i == self.blank_id:
                raise ValueError("blank may not appear in a target sequence")
            ids.append(i)
        return ids

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.symbols[i] for i in ids]

    def ids_of_kind(self, *kinds: str) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k in kinds]

    def digest(self) -> str:
        h = hashlib.sha256("\n".join(f"{k}\t{s}" for s, k in zip(self.symbols, self.kinds)).encode())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"symbols": list(self.symbols), "kinds": list(self.kinds), "blank_id": self.blank_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(list(d["symbols"]), d.get("blank_id", 0), list(d.get("kinds", [])))


@dataclass(frozen=True)
class Alignment:
    symbols: tuple[int, ...]
    kind: str  # "ctc" | "rnnt"


def collapse_ctc(a: Sequence[int] | Alignment, blank: int = 0) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    if isinstance(a, Alignment):
        a = a.symbols
    out = []
    prev = None
    for s in a:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return out


def collapse_rnnt(a: Sequence[int] | Alignment, blank: int = 0) -> list[int]:
    """Drop blanks; repeats survive."""
    if isinstance(a, Alignment):
        a = a.symbols
    return [s for s in a if s != blank]


def ctc_min_frames(y: Sequence[int]) -> int:
    """Shortest alignment that collapses to ``y`` (repeats need a blank between)."""
    return len(y) + sum(1 for a, b in zip(y, y[1:]) if a == b)


def enumerate_ctc_alignments(y: Sequence[int], T: int, blank: int = 0) -> list[Alignment]:
    """Every length-``T`` CTC alignment collapsing to ``y``.

    Built constructively: each label occupies a run of >=1 frames, blank runs
    sit between labels (mandatory between repeats) and at both ends.
    """
    y = list(y)
    if T > CTC_MAX_FRAMES or len(y) > CTC_MAX_LABELS:
        raise OracleScaleError(f"CTC oracle capped at T<={CTC_MAX_FRAMES}, |y|<={CTC_MAX_LABELS}")
    if not y:
        return [Alignment((blank,) * T, "ctc")]
    n = len(y)
    # run lengths: blank_0, lab_1, blank_1, ..., lab_n, blank_n
    mins = []
    for i in range(n):
        mins.append(0 if i == 0 or y[i] != y[i - 1] else 1)
        mins.append(1)
    mins.append(0)
    out = []

    def rec(k: int, remaining: int, runs: list[int]) -> None:
        if k == len(mins):
            if remaining == 0:
                seq = []
                for j, r in enumerate(runs):
                    seq.extend([blank if j % 2 == 0 else y[j // 2]] * r)
                out.append(Alignment(tuple(seq), "ctc"))
            return
        for r in range(mins[k], remaining - sum(mins[k + 1:]) + 1):
            rec(k + 1, remaining - r, runs + [r])

    rec(0, T, [])
    return out


def enumerate_rnnt_paths(y: Sequence[int], T: int, blank: int = 0) -> list[Alignment]:
    """Every blank/emit interleaving with ``T`` blanks, ending in a blank."""
    y = list(y)
    if T > RNNT_MAX_FRAMES or len(y) > RNNT_MAX_LABELS:
        raise OracleScaleError(f"RNN-T oracle capped at T<={RNNT_MAX_FRAMES}, |y|<={RNNT_MAX_LABELS}")
    if T < 1:
        return []
    U = len(y)
    out = []
    # choose which of the first T+U-1 slots hold labels; the last slot is blank
    for pos in itertools.combinations(range(T + U - 1), U):
        seq = [blank] * (T + U)
        for k, p in enumerate(pos):
            seq[p] = y[k]
        out.append(Alignment(tuple(seq), "rnnt"))
    assert len(out) == comb(T + U - 1, U)
    return out
