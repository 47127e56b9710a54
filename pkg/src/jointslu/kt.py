"""Knowledge transfer: teacher embeddings, attention pooling, contrastive alignment."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import autodiff as ad
from .params import ParamStore

CLS = "[CLS]"
TEACHER_MAGIC = b"JSLUTEMB"
TEACHER_VERSION = 1


def tokenize(text: str) -> list[str]:
    """Character tokens with a leading [CLS]."""
    return [CLS] + list(text)


@dataclass
class TeacherEmbeddings:
    tokens: list[str]
    rows: np.ndarray  # [len(tokens), width]

    def __post_init__(self) -> None:
        if self.rows.shape[0] != len(self.tokens):
            raise ValueError(f"{self.rows.shape[0]} teacher rows for {len(self.tokens)} tokens")


class TeacherProvider(Protocol):
    width: int

    def embed(self, tokens: Sequence[str], utt_id: str | None = None) -> np.ndarray: ...


class SyntheticTeacher:
    """Fixed-seed base vector per token, averaged with its immediate neighbours.

    Stands in for a contextual text encoder: rows depend on the token and on
    what surrounds it.
    """

    def __init__(self, width: int = 32, seed: int = 0):
        self.width = width
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def base(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            rng = np.random.default_rng([self.seed, zlib.crc32(token.encode("utf-8"))])
            v = rng.normal(size=self.width)
            self._cache[token] = v
        return v

    def embed(self, tokens: Sequence[str], utt_id: str | None = None) -> np.ndarray:
        base = np.stack([self.base(t) for t in tokens]) if tokens else np.zeros((0, self.width))
        out = np.empty_like(base)
        n = len(tokens)
        for i in range(n):
            lo, hi = max(0, i - 1), min(n, i + 2)
            out[i] = base[lo:hi].mean(axis=0)
        return out


class FileTeacher:
    """Precomputed rows keyed by utterance id.

    File layout (little-endian uint32 counts)::

        b"JSLUTEMB" version
        n_tokens  (len token)*n_tokens
        n_records (len id  rows width float32*rows*width)*n_records
    """

    def __init__(self, vocab: list[str], records: dict[str, np.ndarray]):
        self.vocab = list(vocab)
        self._vocab_set = set(vocab)
        self.records = records
        widths = {r.shape[1] for r in records.values()}
        if len(widths) > 1:
            raise ValueError(f"inconsistent teacher widths {sorted(widths)}")
        self.width = widths.pop() if widths else 0

    def embed(self, tokens: Sequence[str], utt_id: str | None = None) -> np.ndarray:
        unknown = [t for t in tokens if t not in self._vocab_set]
        if unknown:
            raise KeyError(f"tokens not in teacher vocabulary: {sorted(set(unknown))}")
        if utt_id not in self.records:
            raise KeyError(f"no teacher rows for utterance {utt_id!r}")
        rows = self.records[utt_id]
        if rows.shape[0] != len(tokens):
            raise ValueError(f"{utt_id}: {rows.shape[0]} teacher rows for {len(tokens)} tokens")
        return rows.copy()

    def save(self, path: str | Path) -> None:
        def s(x: str) -> bytes:
            b = x.encode("utf-8")
            return struct.pack("<I", len(b)) + b

        chunks = [TEACHER_MAGIC, struct.pack("<I", TEACHER_VERSION), struct.pack("<I", len(self.vocab))]
        chunks += [s(t) for t in self.vocab]
        chunks.append(struct.pack("<I", len(self.records)))
        for uid, rows in self.records.items():
            rows = np.ascontiguousarray(rows, dtype="<f4")
            chunks.append(s(uid) + struct.pack("<II", *rows.shape) + rows.tobytes())
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path: str | Path) -> "FileTeacher":
        buf = Path(path).read_bytes()
        if buf[:8] != TEACHER_MAGIC:
            raise ValueError(f"{path}: not a teacher embedding file")
        pos = 8

        def u32():
            nonlocal pos
            (v,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            return v

        def s():
            nonlocal pos
            n = u32()
            out = buf[pos: pos + n].decode("utf-8")
            pos += n
            return out

        if u32() != TEACHER_VERSION:
            raise ValueError(f"{path}: unsupported teacher file version")
        vocab = [s() for _ in range(u32())]
        records = {}
        for _ in range(u32()):
            uid = s()
            r, w = u32(), u32()
            records[uid] = np.frombuffer(buf, "<f4", r * w, pos).reshape(r, w).astype(np.float64)
            pos += 4 * r * w
        return cls(vocab, records)


def teacher_embed(transcript: Sequence[str], provider: TeacherProvider,
                  utt_id: str | None = None) -> TeacherEmbeddings:
    tokens = list(transcript)
    return TeacherEmbeddings(tokens, provider.embed(tokens, utt_id))


class AttentionPool:
    """Single-head scaled dot-product pooling of encoder frames by token queries."""

    def __init__(self, params: ParamStore, token_vocab: list[str], d_model: int, width: int):
        self.p = params
        self.width = width
        self.token_index = {t: i for i, t in enumerate(token_vocab)}
        params.get_or_create("kt.emb", (len(token_vocab), width), "normal")
        params.get_or_create("kt.Wq", (width, width))
        params.get_or_create("kt.Wk", (width, d_model))
        params.get_or_create("kt.Wv", (width, d_model))

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        try:
            return [self.token_index[t] for t in tokens]
        except KeyError as e:
            raise KeyError(f"token {e.args[0]!r} not in KT token vocabulary") from None

    def attend(self, tokens: Sequence[str], H: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        """Pooled rows [n, width] and the attention weights [n, T]."""
        if H.shape[0] == 0:
            raise ValueError("attention over an empty encoder output")
        p = self.p
        q = ad.matmul(ad.embedding(p["kt.emb"], self.token_ids(tokens)), ad.transpose(p["kt.Wq"]))
        k = ad.matmul(H, ad.transpose(p["kt.Wk"]))
        v = ad.matmul(H, ad.transpose(p["kt.Wv"]))
        w = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(self.width)))
        return ad.matmul(w, v), w


def attend_tokens(pool: AttentionPool, tokens: Sequence[str], H: ad.Tensor) -> ad.Tensor:
    return pool.attend(tokens, H)[0]


def cls_query(pool: AttentionPool, H: ad.Tensor) -> ad.Tensor:
    """The utterance vector x_[CLS], shape [width]."""
    return ad.reshape(pool.attend([CLS], H)[0], (pool.width,))


def align_loss(bx: ad.Tensor, by, tau: float = 0.07) -> ad.Tensor:
    """Symmetric InfoNCE over row cosine similarities, weighted by tau / (2b).

    ``s[i, j]`` is the cosine between teacher row i and student row j.
    """
    by = by if isinstance(by, ad.Tensor) else ad.Tensor(by)
    if bx.shape != by.shape or bx.ndim != 2:
        raise ad.ShapeError(f"align_loss: shapes {bx.shape} and {by.shape} do not conform")
    b = bx.shape[0]
    s = ad.scale(ad.matmul(ad.l2_normalize(by), ad.transpose(ad.l2_normalize(bx))), 1.0 / tau)
    diag = (np.arange(b), np.arange(b))
    rows = ad.getitem(ad.log_softmax(s), diag)
    cols = ad.getitem(ad.log_softmax(ad.transpose(s)), diag)
    return ad.scale(ad.reduce_sum(ad.add(rows, cols)), -tau / (2 * b))
