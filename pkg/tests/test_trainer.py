import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hignn.melenc import MelEncoder
from hignn.metrics import MCD_CONST, dtw_align, duration_mse, f0_rmse, mcd_proxy
from hignn.substrate import ParamStore, derive_rng, init_module
from hignn.trainer import (NumericError, evaluate, evaluate_targets_against_themselves, split_windows, train,
                           batch_schedule)


def brute_force_dtw(a, b):
    """Exhaustive minimum over all monotone (1,0)/(0,1)/(1,1) paths."""
    a = np.asarray(a, float).reshape(len(a), -1)
    b = np.asarray(b, float).reshape(len(b), -1)
    best = math.inf

    def walk(i, j, cost):
        nonlocal best
        cost += float(np.linalg.norm(a[i] - b[j]))
        if i == len(a) - 1 and j == len(b) - 1:
            best = min(best, cost)
            return
        if i + 1 < len(a):
            walk(i + 1, j, cost)
        if j + 1 < len(b):
            walk(i, j + 1, cost)
        if i + 1 < len(a) and j + 1 < len(b):
            walk(i + 1, j + 1, cost)

    walk(0, 0, 0.0)
    return best


def path_cost(a, b, path):
    a = np.asarray(a, float).reshape(len(a), -1)
    b = np.asarray(b, float).reshape(len(b), -1)
    return sum(float(np.linalg.norm(a[i] - b[j])) for i, j in path)


class TestDTW:
    def test_identical(self):
        x = derive_rng(0, "dtw").normal(size=(5, 3))
        path, cost = dtw_align(x, x)
        assert cost == 0 and path == [(i, i) for i in range(5)]

    def test_duplicated_index(self):
        path, cost = dtw_align([0.0, 1.0, 2.0], [0.0, 1.0, 1.0, 2.0])
        assert cost == 0
        assert path == [(0, 0), (1, 1), (1, 2), (2, 3)]
        assert brute_force_dtw([0, 1, 2], [0, 1, 1, 2]) == 0

    def test_random_pairs_match_exhaustive(self):
        rng = derive_rng(1, "dtw-pairs")
        for _ in range(220):
            ta, tb, d = rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 3)
            a, b = rng.normal(size=(ta, d)), rng.normal(size=(tb, d))
            path, cost = dtw_align(a, b)
            assert abs(cost - brute_force_dtw(a, b)) <= 1e-12
            assert abs(path_cost(a, b, path) - cost) <= 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.lists(st.floats(-5, 5), min_size=1, max_size=6))
    def test_path_shape(self, a, b):
        path, _ = dtw_align(a, b)
        assert path[0] == (0, 0) and path[-1] == (len(a) - 1, len(b) - 1)
        for (i0, j0), (i1, j1) in zip(path, path[1:]):
            assert (i1 - i0, j1 - j0) in {(1, 0), (0, 1), (1, 1)}

    def test_empty(self):
        with pytest.raises(ValueError):
            dtw_align(np.zeros((0, 2)), np.zeros((3, 2)))


class TestMetrics:
    def test_mcd_constant_offset(self):
        mel = derive_rng(2, "mcd").normal(size=(7, 5))
        c = 0.3
        path = [(i, i) for i in range(7)]
        assert mcd_proxy(mel + c, mel, path) == pytest.approx(MCD_CONST * math.sqrt(2 * 5) * c, rel=1e-12)

    def test_f0_rmse_and_duration_mse(self):
        path = [(0, 0), (1, 1)]
        assert f0_rmse([1.0, 2.0], [1.0, 4.0], path) == pytest.approx(math.sqrt(2.0))
        assert duration_mse([1, 2, 3], [1, 2, 5]) == pytest.approx(4 / 3)

    def test_self_evaluation_is_zero(self, tiny_windows):
        r = evaluate_targets_against_themselves(tiny_windows)
        assert r == {"f0_rmse": 0.0, "duration_mse": 0.0, "mcd_proxy": 0.0}


def test_split_by_document(tiny_windows):
    tr, te = split_windows(tiny_windows, 0.34)
    assert {w.doc_id for w in tr}.isdisjoint({w.doc_id for w in te})
    assert len(tr) + len(te) == len(tiny_windows) and te


def test_batch_schedule_seeded():
    a = [list(b) for b in batch_schedule(10, 3, 8, seed=5)]
    b = [list(b) for b in batch_schedule(10, 3, 8, seed=5)]
    assert a == b and all(len(x) == 3 for x in a)


@pytest.fixture(scope="module")
def melenc():
    return init_module(MelEncoder(4, 8, 6), 0).double().eval()


def _params(model):
    return {k: v.detach().clone() for k, v in ParamStore.from_module(model, 0).tensors.items()}


class TestTraining:
    def test_losses_nonnegative_and_deterministic(self, tiny_cfg, tiny_windows, tiny_corpus, melenc):
        a = train(tiny_cfg, tiny_windows, tiny_corpus[1], melenc)
        b = train(tiny_cfg, tiny_windows, tiny_corpus[1], melenc)
        assert a.history == b.history
        assert all(v >= 0 for h in a.history for v in h.values())
        pa, pb = _params(a.model), _params(b.model)
        assert all(torch.equal(pa[k], pb[k]) for k in pa)

    def test_beta_zero_matches_switch(self, tiny_cfg, tiny_windows, tiny_corpus, melenc):
        a = train(tiny_cfg.replace(beta=0.0), tiny_windows, tiny_corpus[1], melenc)
        b = train(tiny_cfg.replace(no_supervision=True), tiny_windows, tiny_corpus[1], melenc)
        pa, pb = _params(a.model), _params(b.model)
        assert all(torch.equal(pa[k], pb[k]) for k in pa)

    def test_beta_changes_supervision_trajectory(self, tiny_cfg, tiny_windows, tiny_corpus, melenc):
        a = train(tiny_cfg.replace(beta=1.0), tiny_windows, tiny_corpus[1], melenc)
        b = train(tiny_cfg.replace(beta=0.0), tiny_windows, tiny_corpus[1], melenc)
        sa = [h["sup"] for h in a.history]
        sb = [h["sup"] for h in b.history]
        assert sa[0] == sb[0] and sa != sb

    def test_melenc_frozen(self, tiny_cfg, tiny_windows, tiny_corpus, melenc):
        before = {k: v.clone() for k, v in melenc.state_dict().items()}
        train(tiny_cfg, tiny_windows, tiny_corpus[1], melenc)
        assert all(torch.equal(before[k], v) for k, v in melenc.state_dict().items())

    def test_variants_share_data_order(self, tiny_cfg, tiny_windows, tiny_corpus, melenc):
        a = train(tiny_cfg, tiny_windows, tiny_corpus[1], melenc)
        b = train(tiny_cfg.replace(no_context_attention=True, no_global_node=True), tiny_windows,
                  tiny_corpus[1], melenc)
        assert a.first_batch == b.first_batch

    def test_nonfinite_loss_aborts(self, tiny_cfg, tiny_windows, tiny_corpus):
        cfg = tiny_cfg.replace(f0_mean=float("nan"), steps=3)
        with pytest.raises(NumericError, match="non-finite f0 loss at step 0"):
            train(cfg, tiny_windows, tiny_corpus[1], None)

    def test_loss_decreases_with_all_streams_off(self, tiny_cfg, tiny_windows, tiny_corpus):
        cfg = tiny_cfg.replace(no_supervision=True, no_context_attention=True, no_global_node=True, steps=200)
        h = train(cfg, tiny_windows, tiny_corpus[1], None).history
        assert np.mean([x["total"] for x in h[-20:]]) < np.mean([x["total"] for x in h[:20]])


def test_eval_is_pure(tiny_cfg, tiny_windows, tiny_corpus):
    res = train(tiny_cfg, tiny_windows, tiny_corpus[1], None)
    a = evaluate(res.model, tiny_windows, tiny_corpus[1])
    b = evaluate(res.model, tiny_windows, tiny_corpus[1])
    assert a.dumps() == b.dumps()
    assert a.config_hash == tiny_cfg.config_hash() and a.seed == tiny_cfg.seed
    assert len(a.per_sentence) == len(tiny_windows)
