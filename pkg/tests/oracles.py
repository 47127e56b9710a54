"""Independent reference computations used by the tests.

Nothing here imports the code paths it checks.
"""

import itertools
import math
from collections import Counter

import numpy as np


def log_softmax(x):
    x = np.asarray(x, dtype=np.float64)
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def manual_collapse_ctc(a, blank=0):
    # step 1: merge runs; step 2: drop blanks
    merged = [s for i, s in enumerate(a) if i == 0 or a[i - 1] != s]
    return [s for s in merged if s != blank]


def all_strings(V, T):
    return list(itertools.product(range(V), repeat=T))


def ctc_brute_force_nll(logprobs, y, blank=0):
    """-log sum over every length-T string that collapses to y."""
    T, V = logprobs.shape
    total = 0.0
    for a in all_strings(V, T):
        if manual_collapse_ctc(list(a), blank) == list(y):
            total += math.exp(sum(logprobs[t, s] for t, s in enumerate(a)))
    return -math.log(total) if total > 0 else math.inf


def ctc_paths_nll(logprobs, paths):
    return -float(np.logaddexp.reduce([sum(logprobs[t, s] for t, s in enumerate(a)) for a in paths]))


def rnnt_paths_nll(jlp, y, paths, blank=0):
    """Walk each blank/emit interleaving through the trellis and sum."""
    scores = []
    for a in paths:
        t = u = 0
        s = 0.0
        for sym in a:
            if sym == blank:
                s += jlp[t, u, blank]
                t += 1
            else:
                assert sym == y[u]
                s += jlp[t, u, sym]
                u += 1
        scores.append(s)
    return -float(np.logaddexp.reduce(scores))


def levenshtein_recursive(a, b):
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def best_matching(hyp, ref):
    """Maximum number of equal pairs under a one-to-one assignment, by permutation search."""
    hyp, ref = list(hyp), list(ref)
    if len(hyp) > len(ref):
        hyp, ref = ref, hyp
    best = 0
    for perm in itertools.permutations(range(len(ref)), len(hyp)):
        best = max(best, sum(hyp[i] == ref[j] for i, j in enumerate(perm)))
    return best


def exhaustive_scores(hyps, refs):
    tp = nh = nr = ok = 0
    for h, r in zip(hyps, refs):
        hl = list(Counter(h.entities).elements())
        rl = list(Counter(r.entities).elements())
        tp += best_matching(hl, rl)
        nh += len(hl)
        nr += len(rl)
        ok += h.intent == r.intent
    p = tp / nh if nh else (1.0 if nr == 0 else 0.0)
    rc = tp / nr if nr else (1.0 if nh == 0 else 0.0)
    f1 = 2 * p * rc / (p + rc) if p + rc else 0.0
    return p, rc, f1, ok / len(refs)


def info_nce_terms(bx, by, tau):
    """Symmetric contrastive loss summed term by term."""
    b = bx.shape[0]

    def cos(u, v):
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

    s = [[cos(by[i], bx[j]) for j in range(b)] for i in range(b)]
    total = 0.0
    for i in range(b):
        row = sum(math.exp(s[i][j] / tau) for j in range(b))
        col = sum(math.exp(s[j][i] / tau) for j in range(b))
        total += math.log(math.exp(s[i][i] / tau) / row) + math.log(math.exp(s[i][i] / tau) / col)
    return -tau / (2 * b) * total


def exhaustive_best_path(scorer, cap):
    """Best single-alignment score over every decision sequence under the per-frame cap."""
    best = [-math.inf, None]

    def rec(t, emitted, g, state, score, tokens):
        lp = scorer.joint(t, g)
        sb = score + float(lp[scorer.blank])
        if t + 1 == scorer.frames:
            if sb > best[0]:
                best[:] = [sb, tokens]
        else:
            rec(t + 1, 0, g, state, sb, tokens)
        if emitted < cap:
            for k in range(lp.size):
                if k != scorer.blank:
                    g2, st2 = scorer.step(state, k)
                    rec(t, emitted + 1, g2, st2, score + float(lp[k]), tokens + (k,))

    g, st = scorer.start()
    rec(0, 0, g, st, 0.0, ())
    return best[0], best[1]


def count_paths(frames, vocab_nonblank, cap):
    per_frame = sum(vocab_nonblank ** k for k in range(cap + 1))
    return per_frame ** frames
