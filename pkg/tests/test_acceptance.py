"""Acceptance gate: one test per shipping criterion, run in order.

Each test prints a single PASS/FAIL line (visible with -s, or in the
failure report) and then asserts, so the pytest -v listing doubles as
the sign-off sheet. Criteria:

  1  analytic gradients match central finite differences
  2  zeroed image features reproduce the text-only model exactly
  3  attention rows are distributions and the visual gate stays in (0,1)
  4  a multimodal model memorizes 64 synthetic pairs quickly on one core
  5  parameter-budget arithmetic at full dimensions
  6  metric scorers against hand-computed and exhaustive oracles
  7  training-recipe conformance (init, dropout, early stop, checkpoint)
  8  subword learner against a brute-force reference

Criterion 5's overhead clause is a known failure: the architecture
built here costs 2.99% extra parameters at the full dimensions, not
the 6.6% the check pins. The test states the target as given and is
expected to stay red; the README walks through the arithmetic.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from test_data import CLASSIC_LINES, oracle_learn
from test_metrics import TER_SHIFT_CASES, oracle_min_edits

from mnmt.data import BOS_ID, bpe_apply, bpe_join, bpe_learn, build_corpus, tokenize
from mnmt.decoder import DecoderState, decode_step, greedy_decode
from mnmt.attention import precompute_annotations
from mnmt.metrics import approx_randomization, bleu4, chrf, ter
from mnmt.model import ModelConfig, ModelParams, NmtModel, param_count, parameter_specs
from mnmt.tensor import Tape, backward, using_dtype
from mnmt.training import (
    EarlyStopState,
    GAUSSIAN_STDDEV,
    TrainConfig,
    init_params,
    load_checkpoint,
    make_dropout_masks,
    save_checkpoint,
    train,
    validation_bleu,
)
from mnmt.vision import synth_features


def _report(criterion, ok, detail):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    return line


# ---------------------------------------------------------------------------
# 1. gradient fidelity

def test_criterion_1_gradient_fidelity():
    start = time.monotonic()
    with using_dtype("float64"):
        config = ModelConfig(src_vocab_size=20, tgt_vocab_size=20, emb_dim=8,
                             enc_dim=8, dec_dim=8, att_dim=8, proj_dim=8,
                             multimodal=True, feature_rows=4, feature_dim=6)
        model = NmtModel(config, init_params(config, 5))
        rng = np.random.default_rng(11)
        src = rng.integers(4, 20, size=5).tolist()
        tgt = rng.integers(4, 20, size=4).tolist()
        feats = rng.standard_normal((4, 6))

        with Tape():
            loss, _ = model.sentence_loss(src, tgt, features=feats)
            backward(loss)
        analytic = {name: np.array(t.grad) for name, t in model.params.items()}

        def loss_value():
            value, _ = model.sentence_loss(src, tgt, features=feats)
            return float(value.data)

        h = 1e-5
        worst = 0.0
        checked = 0
        for name, tensor in model.params.items():
            flat = tensor.data.ravel()
            fd = np.empty_like(flat)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = loss_value()
                flat[i] = keep - h
                down = loss_value()
                flat[i] = keep
                fd[i] = (up - down) / (2 * h)
            a = analytic[name].ravel()
            # relative error with an absolute guard for near-zero entries
            denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-4)
            worst = max(worst, float((np.abs(a - fd) / denom).max()))
            checked += flat.size
    elapsed = time.monotonic() - start
    ok = worst < 1e-4 and elapsed < 30.0
    detail = _report(1, ok, f"{checked} parameters, max relative error "
                            f"{worst:.3e} (< 1e-4), {elapsed:.1f}s (< 30s)")
    assert ok, detail


# ---------------------------------------------------------------------------
# 2. zero-image equivalence

def _shared_weight_pair(rng, seed):
    dims = dict(emb_dim=int(rng.integers(2, 8)), enc_dim=int(rng.integers(2, 8)),
                dec_dim=int(rng.integers(2, 8)), att_dim=int(rng.integers(2, 8)),
                proj_dim=int(rng.integers(2, 8)))
    vocab = dict(src_vocab_size=int(rng.integers(6, 16)),
                 tgt_vocab_size=int(rng.integers(6, 16)))
    rows, feat_dim = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    cfg_mm = ModelConfig(multimodal=True, feature_rows=rows, feature_dim=feat_dim,
                         **vocab, **dims)
    cfg_txt = ModelConfig(multimodal=False, **vocab, **dims)
    mm = NmtModel(cfg_mm, init_params(cfg_mm, seed))
    arrays = {spec.name: np.array(mm.params[spec.name].data)
              for spec in parameter_specs(cfg_txt) if spec.name in mm.params}
    arrays["out.L_c"] = np.array(mm.params["out.L_cs"].data)
    txt = NmtModel(cfg_txt, ModelParams.from_arrays(arrays))
    return mm, txt, cfg_mm


def test_criterion_2_zero_image_equivalence():
    rng = np.random.default_rng(29)
    worst = 0.0
    with using_dtype("float64"):
        for trial in range(100):
            mm, txt, cfg = _shared_weight_pair(rng, seed=trial)
            src = rng.integers(4, cfg.src_vocab_size, size=int(rng.integers(1, 7))).tolist()
            zero = np.zeros((cfg.feature_rows, cfg.feature_dim))
            ann_mm, ann_txt = mm.encode(src), txt.encode(src)
            img_pre = precompute_annotations(mm.att_img, mm.as_feature_tensor(zero))
            st_mm = DecoderState(s=mm.initial_state(ann_mm), prev_token=BOS_ID, step=0)
            st_txt = DecoderState(s=txt.initial_state(ann_txt), prev_token=BOS_ID, step=0)
            for _ in range(4):
                r_mm = decode_step(mm, st_mm, ann_mm, img_pre)
                r_txt = decode_step(txt, st_txt, ann_txt)
                worst = max(worst, float(np.abs(r_mm.dist - r_txt.dist).max()))
                forced = int(rng.integers(0, cfg.tgt_vocab_size))
                st_mm = replace(r_mm.state, prev_token=forced)
                st_txt = replace(r_txt.state, prev_token=forced)
    ok = worst <= 1e-10
    detail = _report(2, ok, f"100 shared-weight configurations, max per-step "
                            f"distribution gap {worst:.3e} (<= 1e-10)")
    assert ok, detail


# ---------------------------------------------------------------------------
# 3. attention and gate contracts

def test_criterion_3_attention_and_gate_contracts():
    rng = np.random.default_rng(47)
    steps = 0
    worst_src = worst_img = 0.0
    betas_ok = True
    dumps_ok = True
    for seed in range(1000):
        if steps >= 1000:
            break
        rows, feat_dim = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        cfg = ModelConfig(src_vocab_size=30, tgt_vocab_size=30,
                          emb_dim=int(rng.integers(3, 9)), enc_dim=int(rng.integers(3, 9)),
                          dec_dim=int(rng.integers(3, 9)), att_dim=int(rng.integers(3, 9)),
                          proj_dim=int(rng.integers(3, 9)),
                          multimodal=True, feature_rows=rows, feature_dim=feat_dim)
        model = NmtModel(cfg, init_params(cfg, seed))
        for _ in range(8):
            src = rng.integers(4, 30, size=int(rng.integers(2, 9))).tolist()
            feats = rng.standard_normal((rows, feat_dim))
            hyp = greedy_decode(model, src, features=feats, max_len=16)
            trajectory = []
            for step in hyp.steps:
                steps += 1
                worst_src = max(worst_src, abs(float(step.alpha_src.sum()) - 1.0))
                worst_img = max(worst_img, abs(float(step.alpha_img.sum()) - 1.0))
                betas_ok = betas_ok and 0.0 < step.beta < 1.0
                trajectory.append(step.beta)
            # each decoded sentence is one gate dump
            frac_half = sum(b > 0.5 for b in trajectory) / len(trajectory)
            frac_high = sum(b > 0.8 for b in trajectory) / len(trajectory)
            dumps_ok = dumps_ok and frac_high <= frac_half
    ok = (steps >= 1000 and worst_src <= 1e-6 and worst_img <= 1e-6
          and betas_ok and dumps_ok)
    detail = _report(3, ok, f"{steps} decode steps: max |sum(alpha)-1| src "
                            f"{worst_src:.2e} img {worst_img:.2e} (<= 1e-6), "
                            f"beta in (0,1): {betas_ok}, dump fractions ordered: {dumps_ok}")
    assert ok, detail


# ---------------------------------------------------------------------------
# 4. overfit sanity on one core

def test_criterion_4_overfit_sanity():
    start = time.monotonic()
    rng = np.random.default_rng(7)
    keys = [f"key{i:02d}" for i in range(64)]
    fillers = [f"pad{i}" for i in range(12)]
    outs = [f"out{i:02d}" for i in range(32)]
    src_lines, tgt_lines = [], []
    for i in range(64):
        src_lines.append(" ".join([keys[i]] + rng.choice(fillers, size=1).tolist()))
        tgt_lines.append(" ".join(rng.choice(outs, size=4).tolist()))
    ids = [f"img-{i:02d}" for i in range(64)]
    feats = synth_features(ids, rows=4, dim=8, seed=1)
    corpus = build_corpus(src_lines, tgt_lines, ids, num_merges=800)

    cfg = ModelConfig(src_vocab_size=len(corpus.src_vocab),
                      tgt_vocab_size=len(corpus.tgt_vocab),
                      emb_dim=32, enc_dim=32, dec_dim=32, att_dim=32, proj_dim=32,
                      multimodal=True, feature_rows=4, feature_dim=8)
    model = NmtModel(cfg, init_params(cfg, seed=3))
    opt = None
    epochs = 0
    best = 0.0
    while epochs < 500:
        tc = TrainConfig(max_epochs=25, batch_size=1, dropout_p=0.0, seed=3,
                         precision="float32")
        result = train(model, corpus.triples, tc, features=feats,
                       opt=opt, start_epoch=epochs)
        opt = result.opt
        epochs += 25
        bleu, _ = validation_bleu(model, corpus.triples, corpus.tgt_word_lines,
                                  corpus.tgt_vocab, features=feats, max_len=12)
        best = max(best, bleu)
        if bleu >= 95.0:
            break
        if time.monotonic() - start > 600:
            break
    elapsed = time.monotonic() - start
    ok = best >= 95.0 and epochs <= 500 and elapsed < 600.0
    detail = _report(4, ok, f"train BLEU4 {best:.2f} (>= 95) after {epochs} epochs "
                            f"(<= 500), {elapsed:.0f}s (< 600s, single core)")
    assert ok, detail


# ---------------------------------------------------------------------------
# 5. parameter-budget arithmetic

def test_criterion_5_parameter_count_reproduction():
    start = time.monotonic()
    full_scale = dict(src_vocab_size=83093, tgt_vocab_size=91141, emb_dim=620,
                      enc_dim=1024, dec_dim=1024, att_dim=1024, proj_dim=620,
                      feature_rows=196, feature_dim=1024)
    text = param_count(ModelConfig(multimodal=False, **full_scale))["total"]
    multi = param_count(ModelConfig(multimodal=True, **full_scale))["total"]
    overhead = 100.0 * (multi - text) / text
    elapsed = time.monotonic() - start
    text_ok = abs(text - 200e6) <= 20e6
    overhead_ok = abs(overhead - 6.6) <= 1.5
    ok = text_ok and overhead_ok and elapsed < 1.0
    detail = _report(5, ok, f"text-only {text:,} (200M +- 10%: {text_ok}), "
                            f"overhead {overhead:.2f}% (6.6 +- 1.5pp: {overhead_ok})")
    assert ok, detail


# ---------------------------------------------------------------------------
# 6. metric oracles

def test_criterion_6_metric_oracles():
    lines = ["the cat sat on the mat", "two dogs run in the deep snow"]
    identity_ok = (bleu4(lines, list(lines)) == pytest.approx(100.0, abs=1e-12)
                   and ter(lines, list(lines)) == 0.0
                   and chrf(lines, list(lines))[0] == pytest.approx(100.0, abs=1e-12))

    # corpus n-gram counts by hand: 11/12, 8/10, 5/8, 3/6, equal lengths
    hyps = ["the cat sat on the mat", "a dog runs in the park"]
    refs = ["the cat is on the mat", "a dog runs in the park"]
    fixture_gap = abs(bleu4(hyps, refs) - 69.189128761545)

    shift_ok = True
    for hyp, ref, expected in TER_SHIFT_CASES:
        h, r = hyp.split(), ref.split()
        assert len(h) <= 8 and len(r) <= 8
        shift_ok = (shift_ok and oracle_min_edits(h, r) == expected
                    and ter([hyp], [ref]) == pytest.approx(expected / len(r), abs=1e-12))

    p_same = approx_randomization("bleu", hyps, list(hyps), refs, trials=300, seed=4)
    p_a = approx_randomization("bleu", hyps, refs, refs, trials=300, seed=9)
    p_b = approx_randomization("bleu", hyps, refs, refs, trials=300, seed=9)
    random_ok = p_same == 1.0 and p_a == p_b

    ok = identity_ok and fixture_gap < 1e-9 and shift_ok and random_ok
    detail = _report(6, ok, f"identities: {identity_ok}, hand BLEU gap "
                            f"{fixture_gap:.1e} (< 1e-9), shifts vs enumeration: "
                            f"{shift_ok}, randomization p=1 and seed-stable: {random_ok}")
    assert ok, detail


# ---------------------------------------------------------------------------
# 7. recipe conformance

def test_criterion_7_recipe_conformance(tmp_path):
    with using_dtype("float64"):
        cfg = ModelConfig(src_vocab_size=300, tgt_vocab_size=300, emb_dim=48,
                          enc_dim=48, dec_dim=48, att_dim=48, proj_dim=48,
                          multimodal=True, feature_rows=6, feature_dim=12)
        params = init_params(cfg, 2)
        worst_orth = 0.0
        gaussian = []
        for spec in parameter_specs(cfg):
            data = params[spec.name].data
            if spec.init == "orthogonal":
                gap = np.abs(data.T @ data - np.eye(data.shape[0])).max()
                worst_orth = max(worst_orth, float(gap))
            elif spec.init == "gaussian":
                gaussian.append(data.ravel())
        var = float(np.concatenate(gaussian).var())
        init_ok = worst_orth < 1e-5 and abs(var - GAUSSIAN_STDDEV**2) < 0.1 * GAUSSIAN_STDDEV**2

    masks_a = make_dropout_masks(cfg, 0.3, seed=5, step=7)
    masks_b = make_dropout_masks(cfg, 0.3, seed=5, step=7)
    masks_c = make_dropout_masks(cfg, 0.3, seed=5, step=8)
    sites = ["enc_fwd", "enc_bwd", "dec", "img", "out"]
    gal_ok = True
    for site in sites:
        vec = getattr(masks_a, site).data
        # one 1-D mask per site: every time step reuses the same vector
        gal_ok = gal_ok and vec.ndim == 1
        gal_ok = gal_ok and np.array_equal(vec, getattr(masks_b, site).data)
        gal_ok = gal_ok and bool(np.all((vec == 0.0) | (np.abs(vec * 0.7 - 1.0) < 1e-6)))
    gal_ok = gal_ok and any(
        not np.array_equal(getattr(masks_a, s).data, getattr(masks_c, s).data)
        for s in sites)

    early = EarlyStopState()
    stop_epochs = []
    for epoch in range(60):
        early.update(epoch, 15.0 + epoch if epoch <= 5 else 12.0)
        if early.should_stop(20):
            stop_epochs.append(epoch)
    early_ok = early.best_epoch == 5 and stop_epochs and stop_epochs[0] == 25

    src = ["a man rides a bike .", "two dogs run in the snow .",
           "a girl plays violin .", "children swim in a lake ."]
    tgt = ["ein Mann fährt Fahrrad .", "zwei Hunde laufen im Schnee .",
           "ein Mädchen spielt Geige .", "Kinder schwimmen in einem See ."]
    corpus = build_corpus(src, tgt, num_merges=60)
    model_cfg = ModelConfig(src_vocab_size=len(corpus.src_vocab),
                            tgt_vocab_size=len(corpus.tgt_vocab),
                            emb_dim=8, enc_dim=8, dec_dim=8, att_dim=8, proj_dim=8)
    model = NmtModel(model_cfg, init_params(model_cfg, 1))
    train(model, corpus.triples, TrainConfig(max_epochs=2, batch_size=2, seed=1))

    def val_loss(m):
        total = 0.0
        for triple in corpus.triples:
            value, _ = m.sentence_loss(triple.src_ids, triple.tgt_ids)
            total += float(value.data)
        return total

    before = val_loss(model)
    path = str(tmp_path / "conformance.npz")
    save_checkpoint(path, model)
    after = val_loss(load_checkpoint(path).model)
    checkpoint_ok = before == after

    ok = init_ok and gal_ok and early_ok and checkpoint_ok
    detail = _report(7, ok, f"init (orthogonality {worst_orth:.1e}, variance "
                            f"{var:.2e}): {init_ok}, tied dropout masks: {gal_ok}, "
                            f"stop at best+20: {early_ok}, checkpoint loss "
                            f"{before:.6f} == {after:.6f}: {checkpoint_ok}")
    assert ok, detail


# ---------------------------------------------------------------------------
# 8. subword oracle

def test_criterion_8_bpe_oracle():
    sentences = [tokenize(line) for line in [
        "the lowest prices in the west",
        "newer and wider streets",
        "she showed the newest low prices",
        "wide streets and low houses",
    ]]
    merges_ok = True
    for corpus in (CLASSIC_LINES, sentences):
        model = bpe_learn(corpus, 40)
        merges, merge_freqs, _ = oracle_learn(corpus, 40)
        merges_ok = (merges_ok and model.merges == merges
                     and model.merge_freqs == merge_freqs)

    model = bpe_learn(sentences, 25)
    identity_ok = all(bpe_join(bpe_apply(model, line)) == line for line in sentences)

    ok = merges_ok and identity_ok
    detail = _report(8, ok, f"merges match brute force at every step: {merges_ok}, "
                            f"apply then join is the identity: {identity_ok}")
    assert ok, detail
