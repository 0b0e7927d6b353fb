import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hignn.melenc import (EmptyInputError, MelEncoder, MelPretrainer, make_batch, mel_encode, pretrain_step,
                          prosody_statistics, speaker_probe_accuracy, supervision_loss)
from hignn.substrate import derive_rng, finite_difference_check, init_module


def _enc(seed=0):
    return init_module(MelEncoder(4, 6, 5), seed)


def test_zero_in_zero_out():
    enc = _enc()
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    assert not mel_encode(enc, np.zeros((7, 4))).any()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10_000))
def test_frame_order_invariant(T, seed):
    rng = derive_rng(seed, "perm")
    mel = rng.normal(size=(T, 4))
    enc = _enc()
    a = mel_encode(enc, mel)
    b = mel_encode(enc, mel[rng.permutation(T)])
    assert torch.allclose(a, b, atol=1e-12, rtol=0)


def test_frame_permutation_bitwise():
    rng = derive_rng(1, "perm")
    mel = rng.normal(size=(9, 4))
    enc = _enc()
    perm = rng.permutation(9)
    assert torch.allclose(mel_encode(enc, mel), mel_encode(enc, mel[perm]), atol=1e-15, rtol=0)


def test_duplicated_frames_identical():
    mel = derive_rng(2, "dup").normal(size=(6, 4))
    enc = _enc()
    assert torch.allclose(mel_encode(enc, mel), mel_encode(enc, np.repeat(mel, 2, axis=0)), atol=1e-12)


def test_empty_input():
    with pytest.raises(EmptyInputError):
        mel_encode(_enc(), np.zeros((0, 4)))


def _batch(sentences):
    stats = np.stack([prosody_statistics(s) for s in sentences])
    return make_batch(sentences, stats.mean(0), stats.std(0) + 1e-8)


def test_lambda_zero_detaches_speaker_loss(tiny_windows):
    sents = [w.cur for w in tiny_windows[:8]]
    batch = _batch(sents)

    def enc_grads(lam, with_ce):
        m = init_module(MelPretrainer(4, 6, 5, 4), 0)
        total, reg, ce = pretrain_step(m, batch, lam)
        (total if with_ce else reg).backward()
        return [p.grad.clone() for p in m.encoder.parameters()]

    for a, b in zip(enc_grads(0.0, True), enc_grads(0.0, False)):
        assert torch.equal(a, b)


def test_dat_sign_property(tiny_windows):
    sents = [w.cur for w in tiny_windows[:8]]
    batch = _batch(sents)

    def ce_grads(reverse):
        m = init_module(MelPretrainer(4, 6, 5, 4), 0)
        emb = m.encoder(batch.frames, batch.mask)
        logits = m.adversary(emb, 1.0) if reverse else m.adversary.classify(emb)
        torch.nn.functional.cross_entropy(logits, batch.speakers).backward()
        return [p.grad.clone() for p in m.encoder.parameters()]

    for a, b in zip(ce_grads(True), ce_grads(False)):
        assert torch.allclose(a, -b, atol=1e-12, rtol=0)


def test_untrained_speaker_accuracy_near_chance():
    rng = derive_rng(0, "chance")
    m = init_module(MelPretrainer(4, 6, 5, 4), 0)
    frames = torch.tensor(rng.normal(size=(1000, 5, 4)))
    mask = torch.ones(1000, 5, dtype=torch.bool)
    labels = torch.tensor(rng.integers(0, 4, 1000))
    with torch.no_grad():
        pred = m.adversary(m.encoder(frames, mask), 1.0).argmax(-1)
    assert abs(float((pred == labels).double().mean()) - 0.25) <= 0.1


def test_probe_separates_informative_embeddings():
    rng = derive_rng(0, "probe-data")
    y = rng.integers(0, 4, 400)
    centers = rng.normal(0, 3, (4, 6))
    x = torch.tensor(centers[y] + rng.normal(size=(400, 6)))
    acc = speaker_probe_accuracy(x[:300], y[:300], x[300:], y[300:], 4)
    assert acc > 0.9
    noise = torch.tensor(rng.normal(size=(400, 6)))
    assert speaker_probe_accuracy(noise[:300], y[:300], noise[300:], y[300:], 4) < 0.45


class TestSupervisionLoss:
    def test_zero_when_equal(self):
        proj = torch.eye(4, 3)
        reps = torch.randn(3, 4)
        assert supervision_loss(reps, reps @ proj, torch.ones(3, dtype=torch.bool), proj).item() == 0

    def test_boundary_averages_present_only(self):
        proj = torch.eye(2)
        reps = torch.zeros(3, 2)
        emb = torch.tensor([[100.0, 100.0], [1.0, 1.0], [3.0, 3.0]])
        loss = supervision_loss(reps, emb, torch.tensor([False, True, True]), proj)
        assert loss.item() == pytest.approx((1.0 + 9.0) / 2)

    def test_gradient_check(self):
        rng = derive_rng(3, "sup")
        reps = torch.tensor(rng.normal(size=(3, 6)), requires_grad=True)
        proj = torch.tensor(rng.normal(size=(6, 4)), requires_grad=True)
        emb = torch.tensor(rng.normal(size=(3, 4)))
        present = torch.tensor([True, True, False])
        rep = finite_difference_check(lambda: supervision_loss(reps, emb, present, proj),
                                      {"reps": reps, "proj": proj})
        # the absent row receives exactly zero gradient on both routes
        assert rep.passed, rep.max_rel_error
