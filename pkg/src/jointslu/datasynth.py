"""Synthetic SLU corpus: templated utterances, SLU tags, BOE targets, frames.

Tags follow the intent-first format: the intent token, then for each entity
its value characters followed by its slot token, e.g.
``IN-weather_query c o l d b-weather_descriptor t o d a y b-date``.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .lattice import BLANK, Vocab

FRAME_MAGIC = b"JSLUFRMS"
FRAME_VERSION = 1
CHAR_BASE_SEED = 1234

_SLOT = re.compile(r"\{(\w+)\}")


def intent_symbol(name: str) -> str:
    return f"IN-{name}"


def slot_symbol(name: str) -> str:
    return f"b-{name}"


def _default_templates() -> dict[str, list[str]]:
    return {
        "weather_query": ["how {weather_descriptor} is it {date}", "is it {weather_descriptor} in {place}",
                          "weather in {place} {date}"],
        "alarm_set": ["wake me up at {time}", "set an alarm for {time} {date}", "alarm at {time}"],
        "calendar_set": ["meet {person} {date} at {time}", "remind me to call {person} {date}"],
        "iot_on": ["turn on the {device}", "switch the {device} on in {place}"],
        "takeaway_order": ["order {food} for {time}", "get me some {food}"],
        "play_music": ["play some {music_genre}", "play {music_genre} for {person}"],
    }


def _default_values() -> dict[str, list[str]]:
    return {
        "date": ["today", "tomorrow", "monday", "friday"],
        "time": ["noon", "five pm", "seven am", "midnight"],
        "place": ["paris", "london", "home", "the office"],
        "weather_descriptor": ["cold", "rainy", "sunny", "windy"],
        "person": ["anna", "bob", "my mom", "james"],
        "device": ["lights", "heater", "radio", "fan"],
        "food": ["pizza", "sushi", "pasta", "tacos"],
        "music_genre": ["jazz", "rock", "pop", "blues"],
    }


@dataclass
class Grammar:
    templates: dict[str, list[str]] = field(default_factory=_default_templates)
    values: dict[str, list[str]] = field(default_factory=_default_values)
    carriers: list[str] = field(default_factory=lambda: ["please", "hey", "now"])
    carrier_prob: float = 0.3
    frame_width: int = 16
    noise: float = 0.1

    def __post_init__(self) -> None:
        for intent, temps in self.templates.items():
            for t in temps:
                for slot in _SLOT.findall(t):
                    if slot not in self.values:
                        raise ValueError(f"template {t!r} of {intent} uses unknown slot {slot!r}")

    @property
    def intents(self) -> list[str]:
        return list(self.templates)

    @property
    def slot_types(self) -> list[str]:
        return list(self.values)

    @property
    def boe_labels(self) -> list[str]:
        return [intent_symbol(i) for i in self.intents] + list(self.slot_types)

    def chars(self) -> list[str]:
        text = " ".join(t for ts in self.templates.values() for t in ts)
        text += " " + " ".join(v for vs in self.values.values() for v in vs)
        text += " " + " ".join(self.carriers)
        return sorted(set(_SLOT.sub(" ", text)))

    def vocab(self) -> Vocab:
        chars = self.chars()
        symbols = [BLANK] + chars + [intent_symbol(i) for i in self.intents] + [slot_symbol(s) for s in self.slot_types]
        kinds = ["blank"] + ["char"] * len(chars) + ["intent"] * len(self.intents) + ["slot"] * len(self.slot_types)
        return Vocab(symbols, 0, kinds)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Utterance:
    id: str
    text: str
    intent: str
    entities: list[tuple[str, str]]
    frames: np.ndarray = field(repr=False)

    def tag_symbols(self) -> list[str]:
        out = [intent_symbol(self.intent)]
        for slot, value in self.entities:
            out.extend(value)
            out.append(slot_symbol(slot))
        return out

    def boe_labels(self) -> list[str]:
        return [intent_symbol(self.intent)] + [slot for slot, _ in self.entities]


def char_base(c: str, width: int = 16) -> np.ndarray:
    return np.random.default_rng([CHAR_BASE_SEED, ord(c)]).normal(size=width)


def render_frames(transcript: str, seed: int, sigma: float = 0.1, width: int = 16) -> np.ndarray:
    """Each character emits 1-3 noisy copies of its base vector.

    A character repeating its predecessor gets at least two frames so the
    transcript always stays CTC-feasible.
    """
    rng = np.random.default_rng(seed)
    rows = []
    prev = None
    for c in transcript:
        n = int(rng.integers(1, 4))
        if c == prev:
            n = max(n, 2)
        base = char_base(c, width)
        rows.extend(base + sigma * rng.normal(size=width) for _ in range(n))
        prev = c
    if not rows:
        return np.zeros((0, width))
    return np.stack(rows)


def generate(grammar: Grammar, n: int, seed: int, prefix: str = "utt") -> list[Utterance]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not any(grammar.templates.values()):
        raise ValueError("grammar has no templates")
    rng = np.random.default_rng(seed)
    intents = [i for i in grammar.intents if grammar.templates[i]]
    out = []
    for k in range(n):
        intent = intents[int(rng.integers(len(intents)))]
        temps = grammar.templates[intent]
        template = temps[int(rng.integers(len(temps)))]
        entities = []
        pieces = []
        last = 0
        for m in _SLOT.finditer(template):
            slot = m.group(1)
            vals = grammar.values[slot]
            value = vals[int(rng.integers(len(vals)))]
            pieces.append(template[last:m.start()])
            pieces.append(value)
            entities.append((slot, value))
            last = m.end()
        pieces.append(template[last:])
        text = "".join(pieces)
        if grammar.carriers and rng.random() < grammar.carrier_prob:
            text = grammar.carriers[int(rng.integers(len(grammar.carriers)))] + " " + text
        frames = render_frames(text, int(rng.integers(2**31)), grammar.noise, grammar.frame_width)
        out.append(Utterance(f"{prefix}{k:05d}", text, intent, entities, frames))
    return out


SPLITS = ("train", "dev", "test")


def generate_splits(grammar: Grammar, sizes: Sequence[int] = (500, 100, 100),
                    seed: int = 0) -> dict[str, list[Utterance]]:
    """Train/dev/test with disjoint seed streams."""
    seeds = np.random.SeedSequence(seed).spawn(len(SPLITS))
    return {name: generate(grammar, n, int(s.generate_state(1)[0]), prefix=f"{name}-")
            for name, n, s in zip(SPLITS, sizes, seeds)}


# ---------------------------------------------------------------- corpus files


def write_frame_file(path: Path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    path.write_bytes(FRAME_MAGIC + struct.pack("<III", FRAME_VERSION, *frames.shape) + frames.tobytes())


def read_frame_file(path: Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:8] != FRAME_MAGIC:
        raise ValueError(f"{path}: not a frame file")
    version, T, w = struct.unpack_from("<III", buf, 8)
    if version != FRAME_VERSION:
        raise ValueError(f"{path}: unsupported frame file version {version}")
    return np.frombuffer(buf, "<f4", T * w, 20).reshape(T, w).astype(np.float64)


def utterance_record(u: Utterance, frames_ref=None) -> dict:
    return {
        "id": u.id,
        "text": u.text,
        "slu": {"intent": u.intent, "entities": [{"type": t, "value": v} for t, v in u.entities]},
        "frames": frames_ref if frames_ref is not None else u.frames.tolist(),
    }


def write_corpus(out_dir: str | Path, splits: dict[str, list[Utterance]], grammar: Grammar,
                 config_hash: str = "", frames_mode: str = "inline") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = grammar.vocab()
    manifest = {
        "format": "jointslu-corpus",
        "version": 1,
        "config_hash": config_hash,
        "grammar_hash": grammar.digest(),
        "vocab_hash": vocab.digest(),
        "vocab": vocab.to_dict(),
        "intents": grammar.intents,
        "slot_types": grammar.slot_types,
        "boe_labels": grammar.boe_labels,
        "splits": {},
    }
    for name, utts in splits.items():
        if frames_mode == "binary":
            (out / "frames").mkdir(exist_ok=True)
        with open(out / f"{name}.jsonl", "w") as fh:
            for u in utts:
                ref = None
                if frames_mode == "binary":
                    ref = f"frames/{u.id}.bin"
                    write_frame_file(out / ref, u.frames)
                fh.write(json.dumps(utterance_record(u, ref)) + "\n")
        manifest["splits"][name] = f"{name}.jsonl"
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def read_corpus(path: str | Path) -> tuple[dict, dict[str, list[Utterance]]]:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    splits = {}
    for name, fname in manifest["splits"].items():
        utts = []
        for line in (root / fname).read_text().splitlines():
            if not line.strip():
                continue
            r = json.loads(line)
            fr = r["frames"]
            frames = read_frame_file(root / fr) if isinstance(fr, str) else np.asarray(fr, dtype=np.float64)
            ents = [(e["type"], e["value"]) for e in r["slu"]["entities"]]
            utts.append(Utterance(r["id"], r["text"], r["slu"]["intent"], ents, frames))
        splits[name] = utts
    return manifest, splits
