import hashlib

import numpy as np
import pytest

from jointslu.ctc import ctc_forward_backward
from jointslu.datasynth import (Grammar, char_base, generate, generate_splits, read_corpus, read_frame_file,
                                render_frames, write_corpus, write_frame_file)
from jointslu.lattice import ctc_min_frames
from jointslu.metrics import parse_tag


def test_golden_example():
    u = generate(Grammar(), 1, 0)[0]
    assert u.text == "please play pop for bob"
    assert u.intent == "play_music"
    assert u.entities == [("music_genre", "pop"), ("person", "bob")]
    assert u.frames.shape == (47, 16)
    assert hashlib.sha256(u.frames.astype("<f8").tobytes()).hexdigest()[:16] == "e1b773aec50b072d"


def test_tags_start_with_intent():
    for u in generate(Grammar(), 50, 3):
        tag = u.tag_symbols()
        assert tag[0] == f"IN-{u.intent}"
        assert not any(s.startswith("IN-") for s in tag[1:])


def test_regeneration_is_identical():
    a, b = generate(Grammar(), 20, 9), generate(Grammar(), 20, 9)
    assert [u.text for u in a] == [u.text for u in b]
    assert all(np.array_equal(x.frames, y.frames) for x, y in zip(a, b))


def test_errors():
    with pytest.raises(ValueError):
        generate(Grammar(), 0, 0)
    with pytest.raises(ValueError):
        generate(Grammar(templates={"x": []}), 1, 0)
    with pytest.raises(ValueError):
        Grammar(templates={"x": ["{nope}"]})


def test_render_empty():
    assert render_frames("", 0).shape == (0, 16)


def test_render_noiseless_repeats_base():
    f = render_frames("ab", 5, sigma=0.0)
    rows = {tuple(r) for r in f}
    assert rows == {tuple(char_base("a")), tuple(char_base("b"))}
    assert 2 <= len(f) <= 6


def test_render_deterministic():
    assert np.array_equal(render_frames("hello", 11), render_frames("hello", 11))


def test_corpus_is_feasible_and_consistent():
    g = Grammar()
    vocab = g.vocab()
    for split in generate_splits(g, (500, 100, 100), seed=0).values():
        for u in split:
            y = vocab.encode(list(u.text))
            assert u.frames.shape[0] >= ctc_min_frames(y)
            assert ctc_forward_backward(np.zeros((u.frames.shape[0], len(vocab))), y).feasible
            tag = parse_tag(u.tag_symbols())
            assert tag.intent == u.intent and tag.malformed == 0
            assert sorted(tag.entities.elements()) == sorted(u.entities)
            for _, v in u.entities:
                assert v in u.text
            assert set(u.boe_labels()) <= set(g.boe_labels)


def test_split_sizes_and_disjoint_streams():
    s = generate_splits(Grammar(), (5, 4, 3), seed=1)
    assert [len(s[k]) for k in ("train", "dev", "test")] == [5, 4, 3]
    assert s["train"][0].id == "train-00000"
    assert not np.array_equal(s["train"][0].frames[:1], s["dev"][0].frames[:1])


def test_vocab_layout():
    v = Grammar().vocab()
    chars = v.ids_of_kind("char")
    assert v.blank_id == 0 and chars == list(range(1, len(chars) + 1))
    assert Grammar().boe_labels[:6] == [f"IN-{i}" for i in Grammar().intents]


@pytest.mark.parametrize("mode", ["inline", "binary"])
def test_corpus_round_trip(tmp_path, mode):
    g = Grammar()
    splits = generate_splits(g, (3, 2, 2), seed=2)
    write_corpus(tmp_path, splits, g, "h", frames_mode=mode)
    manifest, back = read_corpus(tmp_path)
    assert manifest["vocab_hash"] == g.vocab().digest()
    for k in splits:
        for a, b in zip(splits[k], back[k]):
            assert (a.id, a.text, a.intent, a.entities) == (b.id, b.text, b.intent, b.entities)
            np.testing.assert_allclose(a.frames, b.frames, atol=1e-6)


def test_frame_file(tmp_path):
    f = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_frame_file(tmp_path / "f.bin", f)
    assert np.array_equal(read_frame_file(tmp_path / "f.bin"), f)
