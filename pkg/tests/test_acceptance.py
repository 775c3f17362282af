"""Acceptance suite: one PASS/FAIL/SKIP line per criterion, printed after the run.

Criteria 6 and 7 need the CoDEx-S splits. Point ``CODEX_S_DIR`` at a directory
holding ``train.txt``, ``valid.txt`` and ``test.txt`` to run them; otherwise
they are reported as SKIP (unverified).
"""
import itertools
import math
import os
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from wge import autodiff as ad
from wge import graphs as gv
from wge import quaternion as qa
from wge.autodiff import Param
from wge.data import load_dataset
from wge.encoder import ABLATIONS, EncoderConfig, build_graphs
from wge.evaluation import evaluate
from wge.model import ScoreWeights, WGEModel
from wge.training import TrainConfig, train

from conftest import ACCEPTANCE_LINES, random_kg, store_from
from gradcheck import check

CODEX_ENV = "CODEX_S_DIR"
REFERENCE_TEST = {"mrr": 0.450, "hits@10": 0.663}


def report(number, status, text):
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {text}")


def codex_dir():
    path = os.environ.get(CODEX_ENV)
    if path and (Path(path) / "train.txt").is_file():
        return Path(path)
    return None


# ---------------------------------------------------------------------------
# 1. quaternion algebra
# ---------------------------------------------------------------------------

def test_criterion_1_quaternion_algebra():
    rng = np.random.default_rng(2024)
    cases = 10_000
    started = time.perf_counter()
    worst_norm = worst_block = worst_real = 0.0
    witnesses = 0
    for _ in range(cases):
        q = qa.Quaternion(*rng.normal(size=4))
        p = qa.Quaternion(*rng.normal(size=4))
        qp, pq = q * p, p * q
        worst_norm = max(worst_norm, abs(qa.q_norm(qp) - qa.q_norm(q) * qa.q_norm(p)) / (qa.q_norm(q) * qa.q_norm(p)))
        qq = q * qa.q_conjugate(q)
        worst_real = max(worst_real, max(abs(qq.i), abs(qq.j), abs(qq.k)) / qa.q_norm(q) ** 2)
        # commutator is 2 (v_q x v_p); nonzero unless the vector parts are parallel
        comm = np.subtract(qp.components, pq.components)
        cross = 2 * np.cross(q.components[1:], p.components[1:])
        assert np.allclose(comm, np.r_[0.0, cross], atol=1e-12)
        witnesses += bool(np.linalg.norm(cross) > 1e-9)

        m, n = (int(x) for x in rng.integers(1, 5, 2))
        w = qa.QuaternionMatrix(rng.normal(size=(4, m, n)))
        v = qa.QuaternionVector(rng.normal(size=(4, n)))
        got = qa.matvec_hamilton(w, v).data.reshape(-1)
        ref = qa.real_block_matrix(w.data) @ v.data.reshape(-1)
        worst_block = max(worst_block, float(np.max(np.abs(got - ref))))
    i, j = qa.Quaternion(0, 1, 0, 0), qa.Quaternion(0, 0, 1, 0)
    assert (i * j).components == (0, 0, 0, 1) and (j * i).components == (0, 0, 0, -1)
    elapsed = time.perf_counter() - started

    ok = worst_norm < 1e-9 and worst_block < 1e-12 and worst_real < 1e-12 and witnesses > 0 and elapsed < 10
    report(1, "PASS" if ok else "FAIL",
           f"{cases} cases, norm rel err {worst_norm:.1e} (<1e-9), block form err {worst_block:.1e} (<1e-12), "
           f"q(x)q* imag {worst_real:.1e}, {witnesses} non-commuting pairs, {elapsed:.1f}s (<10s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. gradients
# ---------------------------------------------------------------------------

def _primitive_cases(rng):
    def p(*shape, low=None):
        if low is not None:
            return Param(rng.uniform(low, 2.0, size=shape))
        return Param(rng.normal(size=shape))

    c = lambda *shape: rng.normal(size=shape)  # noqa: E731
    adj = sp.random(5, 5, density=0.5, random_state=1, format="csr")
    a, b = p(4, 3, 4), p(4, 3, 4)
    w, lw, x2, rl = p(4, 2, 4), p(3, 4), p(5, 4), p(20)
    rl.value += np.sign(rl.value) * 0.05  # keep away from the kink
    pos = p(6, low=0.5)
    g = p(4, 5, 3)
    cs = {k: c(*s) for k, s in dict(q=(4, 3, 4), m=(4, 3, 2), n=(4,), l=(5, 3), s=(4, 5, 3),
                                     g=(4, 4, 3), r=(20,), cc=(4, 6, 4), t=(12, 4)).items()}
    return {
        "hamilton": (lambda t: ad.sum(ad.hamilton(t.param(a), t.param(b)) * cs["q"]), [a, b]),
        "qmatmul": (lambda t: ad.sum(ad.qmatmul(t.param(a), t.param(w)) * cs["m"]), [a, w]),
        "qnormalize": (lambda t: ad.sum(ad.qnormalize(t.param(a)) * cs["q"]), [a]),
        "qinner": (lambda t: ad.sum(ad.qinner(t.param(a), t.param(b)) * cs["n"][:3]), [a, b]),
        "mul": (lambda t: ad.sum(ad.mul(t.param(a), t.param(b)) * cs["q"]), [a, b]),
        "add/sub/neg/scale": (lambda t: ad.sum((ad.scale(t.param(a), 1.5) - ad.neg(t.param(b)) + t.param(a)) * cs["q"]), [a, b]),
        "tanh": (lambda t: ad.sum(ad.tanh(t.param(a)) * cs["q"]), [a]),
        "sigmoid": (lambda t: ad.sum(ad.sigmoid(t.param(a)) * cs["q"]), [a]),
        "log_sigmoid": (lambda t: ad.sum(ad.log_sigmoid(t.param(a)) * cs["q"]), [a]),
        "relu": (lambda t: ad.sum(ad.relu(t.param(rl)) * cs["r"]), [rl]),
        "log": (lambda t: ad.sum(ad.log(t.param(pos))), [pos]),
        "linear": (lambda t: ad.sum(ad.linear(t.param(x2), t.param(lw)) * cs["l"]), [x2, lw]),
        "spmm": (lambda t: ad.sum(ad.spmm(adj, t.param(g)) * cs["s"]), [g]),
        "gather": (lambda t: ad.sum(ad.gather(t.param(g), np.array([0, 4, 4, 2])) * cs["g"]), [g]),
        "concat": (lambda t: ad.sum(ad.concat([t.param(a), t.param(b)], axis=1) * cs["cc"]), [a, b]),
        "reshape/transpose": (lambda t: ad.sum(ad.reshape(ad.transpose(t.param(a), (1, 0, 2)), (12, 4)) * cs["t"]), [a]),
    }


def _five_triple_loss_cases():
    trip = np.array([[0, 0, 1], [1, 1, 2], [2, 0, 3], [3, 1, 0], [1, 2, 3]])
    negs = np.array([[0, 0, 2], [3, 1, 1], [2, 0, 0], [1, 1, 3], [0, 2, 3]])
    store = store_from(trip, 4, 3)
    labels = np.r_[np.ones(5), np.zeros(5)]
    batch = np.concatenate([trip, negs])
    out = {}
    for variant in ("two-view",) + ABLATIONS:
        cfg = EncoderConfig(n_layers=2, dim=2, variant=variant)
        model = WGEModel(cfg, build_graphs(store, variant, 1.0), ScoreWeights.from_alpha0(0.6, 2),
                         rng=np.random.default_rng(7))
        out[f"loss[{variant}]"] = ((lambda m: lambda t: m.loss(t, batch, labels))(model), model.parameters())
    return out


def test_criterion_2_gradients():
    started = time.perf_counter()
    cases = {**_primitive_cases(np.random.default_rng(11)), **_five_triple_loss_cases()}
    errors = {name: check(build, params) for name, (build, params) in cases.items()}
    elapsed = time.perf_counter() - started
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-4 and elapsed < 60
    report(2, "PASS" if ok else "FAIL",
           f"{len(errors)} checks, worst rel err {errors[worst]:.1e} ({worst}) (<1e-4), {elapsed:.1f}s (<60s)")
    assert ok, errors


# ---------------------------------------------------------------------------
# 3. graph construction
# ---------------------------------------------------------------------------

def _brute_views(triples, n_e, beta):
    trips = [tuple(t) for t in triples.tolist()]
    ef = {frozenset({(gv.ENTITY, h), (gv.ENTITY, t)}) for h, _, t in trips if h != t}
    rf = {gv.RFConstraint(r1, t1, r2) for (h1, r1, t1), (h2, r2, t2) in itertools.product(trips, repeat=2) if t1 == h2}
    counts = Counter((c.r_s, c.r_o) for c in rf)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    top = {pair for pair, _ in ordered[:math.ceil(beta * len(ordered))]}
    kept = {c for c in rf if (c.r_s, c.r_o) in top}
    levi = set()
    for h, r, t in trips:
        levi.add(frozenset({(gv.ENTITY, h), (gv.RELATION, r)}))
        levi.add(frozenset({(gv.ENTITY, t), (gv.RELATION, r)}))
    return ef, rf, kept, levi


def _brute_renorm(view):
    n = view.n_nodes
    a = np.eye(n)
    for e in view.edges:
        u, v = (view.index[x] for x in e)
        a[u, v] = a[v, u] = 1.0
    d = [sum(a[i]) for i in range(n)]
    return np.array([[a[i, j] / math.sqrt(d[i] * d[j]) for j in range(n)] for i in range(n)])


def test_criterion_3_graph_construction():
    checked = mismatches = 0
    for seed in range(300):
        rng = np.random.default_rng(seed)
        n_t = int(rng.integers(1, 11))
        n_e, n_r = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        if n_t > n_e * n_e * n_r - (0 if seed % 3 == 0 else n_e * n_r):
            continue
        trip = random_kg(seed, n_t, n_e, n_r, allow_loops=seed % 3 == 0)
        for beta in (0.1, 0.2, 0.5, 1.0):
            ef, rf, kept, levi = _brute_views(trip, n_e, beta)
            ef_view = gv.build_entity_focused(trip, n_e)
            cons, counts = gv.extract_rf_constraints(trip)
            got_kept = gv.filter_constraints(cons, beta, counts)
            levi_view = gv.build_levi(trip)
            rf_view = gv.build_relation_focused(got_kept)
            same = (ef_view.edges == ef and set(cons) == rf and len(cons) == len(rf)
                    and set(got_kept) == kept and levi_view.edges == levi)
            rf_edges = set()
            for c in kept:
                rs, ro, ep = (gv.RELATION, c.r_s), (gv.RELATION, c.r_o), (gv.ENTITY, c.e_p)
                rf_edges |= {frozenset(x) for x in ((rs, ep), (ep, ro), (rs, ro)) if len(set(x)) == 2}
            same &= rf_view.edges == rf_edges
            for view in (ef_view, levi_view, rf_view):
                if view.n_nodes:
                    same &= np.allclose(gv.renormalize(view).toarray(), _brute_renorm(view), rtol=0, atol=1e-15)
            checked += 1
            mismatches += not same
    ok = mismatches == 0 and checked > 500
    report(3, "PASS" if ok else "FAIL",
           f"{checked} (KG, beta) cases with <=10 triples; ef/RF/beta-filter/rf/Levi edge sets and "
           f"renormalized adjacency vs brute force, {mismatches} mismatches")
    assert ok


# ---------------------------------------------------------------------------
# 4. evaluator
# ---------------------------------------------------------------------------

def _sort_oracle(scores, gold, cands):
    order = sorted(cands, key=lambda e: -scores[e])
    positions = [i + 1 for i, e in enumerate(order) if scores[e] == scores[gold]]
    return sum(positions) / len(positions)


def test_criterion_4_evaluator():
    n_e, n_r = 100, 4
    trip = random_kg(77, 400, n_e, n_r)
    store = store_from(trip[:300], n_e, n_r, valid=trip[300:340], test=trip[340:])
    rng = np.random.default_rng(77)
    table = rng.integers(0, 5, size=(n_e, n_r, n_e)).astype(float)  # coarse levels -> ties
    rep = evaluate(store.split("test"), store, lambda h, r: table[h, r, :], lambda r, t: table[:, r, t].T)
    oracle, ties = [], 0
    for h, r, t in store.split("test").tolist():
        cands = [e for e in range(n_e) if e == t or (h, r, e) not in store.known]
        oracle.append(_sort_oracle(table[h, r], t, cands))
        ties += sum(table[h, r, e] == table[h, r, t] for e in cands) > 1
        cands = [e for e in range(n_e) if e == h or (e, r, t) not in store.known]
        oracle.append(_sort_oracle(table[:, r, t], h, cands))
    exact = np.array_equal(rep.ranks, np.array(oracle))
    mrr_ok = rep.mrr == pytest.approx(np.mean(1 / np.array(oracle)), abs=1e-15)
    ok = exact and mrr_ok and ties > 0
    report(4, "PASS" if ok else "FAIL",
           f"{len(oracle)} filtered queries on {n_e} entities, {ties} tail queries with ties, "
           f"ranks {'identical' if exact else 'DIFFER'} to sort oracle")
    assert ok


# ---------------------------------------------------------------------------
# 5. toy overfit
# ---------------------------------------------------------------------------

def test_criterion_5_toy_overfit():
    trip = random_kg(5, 20, 12, 3)
    store = store_from(trip, 12, 3)
    cfg = TrainConfig(dim=16, n_layers=1, epochs=500, lr=0.01, n_neg=5, eval_every=50,
                      eval_split="train", seed=0)
    started = time.perf_counter()
    result = train(cfg, store)
    elapsed = time.perf_counter() - started
    mrr = result.best_metrics["mrr"]
    ok = mrr >= 0.95 and elapsed < 60
    report(5, "PASS" if ok else "FAIL",
           f"20-triple KG, dim 16, K=1, 500 epochs: filtered train MRR {mrr:.3f} (>=0.95), {elapsed:.1f}s (<60s)")
    assert ok


# ---------------------------------------------------------------------------
# 6/7. CoDEx-S
# ---------------------------------------------------------------------------

DESK = dict(dim=64, n_layers=2, beta=0.2, epochs=300, lr=5e-3, batch_size=1024, n_neg=10,
            alpha0=0.6, eval_every=10, patience=5, eval_split="valid", seed=0)


@pytest.mark.slow
def test_criterion_6_codex_desk_run():
    path = codex_dir()
    if path is None:
        report(6, "SKIP", f"CoDEx-S unavailable (set {CODEX_ENV}); desk-scale run UNVERIFIED")
        pytest.skip("CoDEx-S dataset unavailable")
    store, vocab = load_dataset(path)
    sizes = (vocab.n_entities, vocab.n_relations, len(store.train), len(store.split("valid")), len(store.split("test")))
    assert sizes == (2034, 42, 32888, 1827, 1828), sizes
    started = time.perf_counter()
    result = train(TrainConfig(**DESK), store)
    hours = (time.perf_counter() - started) / 3600
    m = result.best_metrics
    ok = m["mrr"] >= 0.30 and m["hits@10"] >= 0.50 and hours <= 4
    report(6, "PASS" if ok else "FAIL",
           f"valid MRR {m['mrr']:.3f} (>=0.30), H@10 {m['hits@10']:.3f} (>=0.50), {hours:.2f}h (<=4h); "
           f"gap to reference test MRR {REFERENCE_TEST['mrr']:.3f}: {REFERENCE_TEST['mrr'] - m['mrr']:+.3f}, "
           f"H@10 {REFERENCE_TEST['hits@10']:.3f}: {REFERENCE_TEST['hits@10'] - m['hits@10']:+.3f}")
    assert ok


@pytest.mark.slow
def test_criterion_7_ablation_trend():
    path = codex_dir()
    if path is None:
        report(7, "SKIP", f"CoDEx-S unavailable (set {CODEX_ENV}); ablation trend UNVERIFIED")
        pytest.skip("CoDEx-S dataset unavailable")
    store, _ = load_dataset(path)
    scores = {}
    for variant in ("two-view",) + ABLATIONS:
        scores[variant] = train(TrainConfig(**{**DESK, "variant": variant}), store).best_metrics["mrr"]
    behind = [v for v in ABLATIONS if scores["two-view"] < scores[v] - 0.01]
    detail = ", ".join(f"{v} {s:.3f}" for v, s in scores.items())
    # soft criterion: deviations are reported, not failed
    report(7, "PASS" if not behind else "DEVIATION", f"valid MRR {detail}"
           + (f"; two-view trails {', '.join(behind)} by more than 0.01" if behind else ""))
