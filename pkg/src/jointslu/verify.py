"""Self-check suites: lattice oracles, finite-difference gradients, reduction identities.

Each check returns a :class:`Check`; ``run_suite`` collects them. The CLI
prints the table and exits nonzero when anything fails.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from math import comb
from typing import Callable

import numpy as np

from . import autodiff as ad
from .ctc import ctc_forward_backward, ctc_loss
from .encoder import Encoder, EncoderConfig, sctc_loss
from .kt import align_loss
from .lattice import enumerate_ctc_alignments, enumerate_rnnt_paths
from .params import ParamStore
from .rnnt import rnnt_alpha_beta, rnnt_loss, rnnt_nll
from .sluhead import JointNet, PredictionNet, SluHeadConfig, boe_head, boe_loss, boe_target, joint_gated, joint_plain

GRAD_TOL = 1e-4


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def _path_score(lp: np.ndarray, path) -> float:
    return sum(lp[t, s] for t, s in enumerate(path))


# ---------------------------------------------------------------- oracles


def ctc_oracle(n: int = 200, seed: int = 0) -> tuple[float, int]:
    """Max |DP - enumeration| over random small instances, and how many were feasible."""
    rng = np.random.default_rng(seed)
    worst, feasible = 0.0, 0
    for _ in range(n):
        T, V = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        y = rng.integers(1, V, size=int(rng.integers(0, 4))).tolist()
        lp = _log_softmax(rng.normal(scale=2.0, size=(T, V)))
        paths = enumerate_ctc_alignments(y, T)
        res = ctc_forward_backward(lp, y)
        if not paths:
            if res.feasible:
                return np.inf, feasible
            continue
        feasible += 1
        ref = -float(np.logaddexp.reduce([_path_score(lp, a.symbols) for a in paths]))
        worst = max(worst, abs(res.loss - ref))
    return worst, feasible


def rnnt_oracle(n: int = 200, seed: int = 1) -> tuple[float, int, float]:
    """Max loss error, count of path-count mismatches, max anti-diagonal error."""
    rng = np.random.default_rng(seed)
    worst, bad_counts, diag = 0.0, 0, 0.0
    for _ in range(n):
        T, U, V = int(rng.integers(1, 6)), int(rng.integers(0, 4)), int(rng.integers(2, 5))
        y = rng.integers(1, V, size=U).tolist()
        jlp = _log_softmax(rng.normal(scale=2.0, size=(T, U + 1, V)))
        paths = enumerate_rnnt_paths(y, T)
        bad_counts += len(paths) != comb(T + U - 1, U)
        scores = []
        for a in paths:
            t = u = 0
            sc = 0.0
            for k in a.symbols:
                sc += jlp[t, u, k]
                if k == 0:
                    t += 1
                else:
                    u += 1
            scores.append(sc)
        ref = -float(np.logaddexp.reduce(scores))
        worst = max(worst, abs(rnnt_nll(jlp, y)[0] - ref))
        alpha, beta, log_z = rnnt_alpha_beta(jlp, y)
        for d in range(T + U):
            cells = [(t, d - t) for t in range(T) if 0 <= d - t <= U]
            diag = max(diag, abs(np.logaddexp.reduce([alpha[c] + beta[c] for c in cells]) - log_z))
    return worst, bad_counts, diag


def _oracle_checks() -> list[Check]:
    out = []
    t0 = time.perf_counter()
    err, feas = ctc_oracle()
    dt = time.perf_counter() - t0
    out.append(Check("oracles", "ctc_vs_enumeration", err <= 1e-10 and dt < 10.0,
                     f"max|d|={err:.2e} over {feas} feasible of 200, {dt:.2f}s", dt))
    t0 = time.perf_counter()
    err, bad, diag = rnnt_oracle()
    dt = time.perf_counter() - t0
    out.append(Check("oracles", "rnnt_vs_enumeration", err <= 1e-10 and bad == 0,
                     f"max|d|={err:.2e}, path-count mismatches={bad}, {dt:.2f}s", dt))
    out.append(Check("oracles", "rnnt_antidiagonal_invariant", diag <= 1e-9, f"max|d|={diag:.2e}"))
    return out


# ---------------------------------------------------------------- gradients


def _swap_check(store: ParamStore, name: str, loss: Callable[[], ad.Tensor]) -> float:
    point = store[name].data.copy()
    original = store._params[name]

    def f(x):
        store._params[name] = x
        try:
            return loss()
        finally:
            store._params[name] = original

    return ad.grad_check(f, point)


def gradient_errors(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    errs: dict[str, float] = {}
    errs["ctc_loss"] = ad.grad_check(lambda x: ctc_loss(x, [1, 2, 2]), rng.normal(size=(6, 4)))
    errs["rnnt_loss"] = ad.grad_check(lambda x: rnnt_loss(ad.log_softmax(x), [2, 1]), rng.normal(size=(3, 3, 4)))
    by = rng.normal(size=(5, 4))
    errs["align_loss"] = ad.grad_check(lambda x: align_loss(x, by), rng.normal(size=(5, 4)))
    tgt = boe_target([0, 3], 5)
    errs["boe_loss"] = ad.grad_check(lambda x: boe_loss(ad.log_softmax(x), tgt), rng.normal(size=5))

    # prediction net + gated joint + BOE head + transducer loss at desk widths
    store = ParamStore(seed)
    cfg = SluHeadConfig()
    d, V, nb, e = 8, 6, 5, 4
    pred = PredictionNet(store, V, cfg)
    JointNet(store, d, cfg.pred_dim, cfg.joint_dim, V, nb, e)
    for k in ("gate.W_b", "gate.W_c", "gate.b"):
        store[k].data = rng.normal(size=store[k].shape)
    H = ad.Tensor(rng.normal(size=(3, d)))
    x_cls = ad.Tensor(rng.normal(size=e))
    s = [3, 5]

    def head_loss():
        p = ad.softmax(boe_head(x_cls, store))
        return rnnt_loss(joint_gated(H, pred(s), p, x_cls, store), s)

    errs["joint_gated"] = max(_swap_check(store, k, head_loss) for k in ("gate.W_b", "gate.W_c", "boe.W", "pred.b"))

    # encoder through SCTC and a transducer head
    enc_store = ParamStore(seed + 1)
    ecfg = EncoderConfig(layers=2, d_model=8, heads=2, sctc_positions=[1, 2])
    enc = Encoder(ecfg, [4, 4], enc_store)
    JointNet(enc_store, 8, 6, 5, 4, 2, 2)
    pnet = PredictionNet(enc_store, 4, SluHeadConfig(pred_dim=6, embed_dim=3, joint_dim=5))
    frames = rng.normal(size=(5, 16))

    def full_loss():
        st = enc.encode(frames)
        return ad.add(sctc_loss(st, [[1, 2], [1, 3]]), rnnt_loss(joint_plain(st.H, pnet([2, 3]), enc_store), [2, 3]))

    errs["encoder_composition"] = max(_swap_check(enc_store, k, full_loss)
                                      for k in ("enc.in.W", "enc.l0.att.Wk", "enc.l1.ff.W2", "enc.sctc0.lin1.W",
                                                "enc.l0.ln1.g", "pred.W", "joint.W_enc"))
    return errs


def _grad_checks() -> list[Check]:
    return [Check("grads", name, err <= GRAD_TOL, f"max rel err={err:.2e}")
            for name, err in gradient_errors().items()]


# ---------------------------------------------------------------- identities


def identity_errors(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    errs: dict[str, float] = {}
    store = ParamStore(seed)
    JointNet(store, 6, 5, 7, 5, 4, 3)
    for k in ("gate.W_h", "gate.W_g", "gate.b"):
        store[k].data = rng.normal(size=store[k].shape)
    H, G = ad.Tensor(rng.normal(size=(3, 6))), ad.Tensor(rng.normal(size=(2, 5)))
    pb, xc = ad.Tensor(rng.dirichlet(np.ones(4))), ad.Tensor(rng.normal(size=3))
    store.zero_("gate.W_b")
    store.zero_("gate.W_c")
    errs["gated_equals_plain"] = float(np.abs(joint_gated(H, G, pb, xc, store).data
                                              - joint_plain(H, G, store).data).max())

    enc_store = ParamStore(seed)
    enc = Encoder(EncoderConfig(layers=2, d_model=8, heads=2, sctc_positions=[1, 2]), [4, 4], enc_store)
    for i in range(2):
        enc_store.zero_(f"enc.sctc{i}.lin1")
    st = enc.encode(rng.normal(size=(6, 16)))
    targets = [[1, 2], [3]]
    indep = np.mean([ctc_forward_backward(_log_softmax(lg.data), y).loss for lg, y in zip(st.head_logits, targets)])
    errs["sctc_conditioning_off"] = max(abs(sctc_loss(st, targets).item() - indep),
                                        float(np.abs(st.H.data - st.X[-1].data).max()))

    B = np.tile(rng.normal(size=4), (2, 1))
    errs["align_closed_form"] = abs(align_loss(ad.Tensor(B), B, 0.07).item() - 0.07 * np.log(2))
    errs["align_single_row"] = abs(align_loss(ad.Tensor(B[:1]), rng.normal(size=(1, 4))).item())

    lp = ad.log_softmax(ad.Tensor(rng.normal(size=5)))
    p = np.exp(lp.data)
    p /= p.sum()
    errs["boe_entropy"] = abs(boe_loss(lp, p).item() + float((p * lp.data).sum()))
    errs["boe_uniform"] = abs(boe_loss(ad.Tensor(np.full(5, -np.log(5))), boe_target([1, 2], 5)).item() - np.log(5))

    errs["jnt_kt_reduces_to_jnt"] = _jnt_kt_reduction(seed)

    jlp = np.full((2, 2, 3), -np.log(3))
    errs["rnnt_two_paths"] = abs(rnnt_nll(jlp, [1])[0] - np.log(27 / 2))
    return errs


def _jnt_kt_reduction(seed: int) -> float:
    from .config import DataConfig, KtConfig, RunConfig
    from .datasynth import generate
    from .pipeline import build_grammar, build_model, loss_jnt, loss_jnt_kt

    cfg = RunConfig(grammar=DataConfig(sizes=[3, 1, 1]), seed=seed,
                    encoder=EncoderConfig(layers=2, d_model=8, heads=2, pos_dim=8, sctc_positions=[1, 2]),
                    sluhead=SluHeadConfig(pred_dim=8, embed_dim=4, joint_dim=8), kt=KtConfig(width=4))
    model = build_model(cfg)
    model.params.zero_("gate.W_b")
    model.params.zero_("gate.W_c")
    batch = generate(build_grammar(cfg), 3, seed)
    with ad.no_tape():
        return abs(loss_jnt_kt(model, batch, 0.5, beta=0.0).total.item() - loss_jnt(model, batch, 0.5).total.item())


def _identity_checks() -> list[Check]:
    tol = {"gated_equals_plain": 0.0}
    return [Check("identities", name, err <= tol.get(name, 1e-12), f"|d|={err:.2e}")
            for name, err in identity_errors().items()]


SUITES = {"oracles": _oracle_checks, "grads": _grad_checks, "identities": _identity_checks}


def run_suite(name: str = "all") -> list[Check]:
    if name == "all":
        return [c for fn in SUITES.values() for c in fn()]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES)} or 'all'")
    return SUITES[name]()


def format_table(checks: list[Check]) -> str:
    w = max((len(c.name) for c in checks), default=4)
    lines = [f"{'suite':<11} {'check':<{w}}  result  detail"]
    for c in checks:
        lines.append(f"{c.suite:<11} {c.name:<{w}}  {'PASS' if c.passed else 'FAIL':<6}  {c.detail}")
    return "\n".join(lines)
