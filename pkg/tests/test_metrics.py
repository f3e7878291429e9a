"""Metric tests: BLEU4 and chrF3 against hand counts, TER against exhaustive search, significance."""

import math
from collections import Counter

import numpy as np
import pytest

from mnmt.metrics import approx_randomization, bleu4, chrf, ter

# ---------------------------------------------------------------------------
# BLEU4

def test_bleu_identity_is_100():
    hyps = ["the cat sat on the mat", "two dogs run in the snow"]
    assert bleu4(hyps, list(hyps)) == pytest.approx(100.0, abs=1e-12)


def test_bleu_two_sentence_fixture_matches_hand_count():
    # Pair 1: clipped matches 5/6, 3/5, 1/4, 0/3. Pair 2 is exact with
    # 6 tokens: 6/6, 5/5, 4/4, 3/3. Corpus: 11/12, 8/10, 5/8, 3/6 with
    # equal lengths, so no brevity penalty. Evaluates to 69.189128761545.
    hyps = ["the cat sat on the mat", "a dog runs in the park"]
    refs = ["the cat is on the mat", "a dog runs in the park"]
    expected = 100.0 * math.exp(
        (math.log(11 / 12) + math.log(8 / 10) + math.log(5 / 8) + math.log(3 / 6)) / 4)
    assert bleu4(hyps, refs) == pytest.approx(expected, abs=1e-9)
    assert bleu4(hyps, refs) == pytest.approx(69.189128761545, abs=1e-9)


def test_bleu_brevity_penalty():
    # All precisions 1 but hypothesis 4 tokens vs reference 6:
    # exp(1 - 6/4) on a perfect prefix.
    got = bleu4(["the cat sat on"], ["the cat sat on the mat"])
    assert got == pytest.approx(100.0 * math.exp(-0.5), abs=1e-9)
    # no penalty when the hypothesis is longer
    long_hyp = bleu4(["the cat sat on the mat x y"], ["the cat sat on the mat"])
    assert long_hyp == pytest.approx(100.0 * (6 / 8 * 5 / 7 * 4 / 6 * 3 / 5) ** 0.25, abs=1e-9)


def test_bleu_unsmoothed_zeroes_on_missing_order():
    # no common 4-gram anywhere: geometric mean collapses to 0
    assert bleu4(["a b c d"], ["a b c e"]) == 0.0
    assert bleu4([""], ["a b c d"]) == 0.0  # empty hypothesis
    assert bleu4(["a b"], ["a b"]) == 0.0   # too short to contain a 4-gram


def test_bleu_accepts_token_lists():
    hyps = ["the cat sat on the mat"]
    refs = ["the cat is on the mat"]
    assert bleu4([h.split() for h in hyps], [r.split() for r in refs]) == \
        pytest.approx(bleu4(hyps, refs), abs=1e-15)


# ---------------------------------------------------------------------------
# chrF

def oracle_char_ngrams(tokens, n):
    s = "".join(tokens)
    return Counter(s[i:i + n] for i in range(len(s) - n + 1))


def oracle_chrf(hyps, refs, beta=3.0, max_order=6):
    """Corpus chrF recomputed with explicit per-key minimum matching."""
    precisions, recalls = [], []
    for n in range(1, max_order + 1):
        matched = htot = rtot = 0
        for h, r in zip(hyps, refs):
            hn = oracle_char_ngrams(h.split(), n)
            rn = oracle_char_ngrams(r.split(), n)
            for g, c in hn.items():
                matched += min(c, rn.get(g, 0))
            htot += sum(hn.values())
            rtot += sum(rn.values())
        if htot == 0 and rtot == 0:
            continue
        precisions.append(matched / htot if htot else 0.0)
        recalls.append(matched / rtot if rtot else 0.0)
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    if p == 0.0 and r == 0.0:
        return 0.0, 0.0, 0.0
    f = (1 + beta ** 2) * p * r / (beta ** 2 * p + r)
    return 100 * f, 100 * p, 100 * r


def test_chrf_identity_is_100():
    f, p, r = chrf(["ein Mann fährt Fahrrad"], ["ein Mann fährt Fahrrad"])
    assert (f, p, r) == pytest.approx((100.0, 100.0, 100.0), abs=1e-12)


def test_chrf_hand_counted_fixture():
    # "abc" vs "abd": order 1 matches 2 of 3, order 2 matches 1 of 2,
    # order 3 matches 0; orders above 3 are absent on both sides. With
    # precision equal to recall the F-score equals both: 7/18.
    f, p, r = chrf(["abc"], ["abd"])
    assert (f, p, r) == pytest.approx((100 * 7 / 18,) * 3, abs=1e-12)


def test_chrf_asymmetric_fixture():
    # "ab" vs "abcd": P = (1 + 1 + 0 + 0)/4, R = (1/2 + 1/3 + 0 + 0)/4,
    # F = 10PR/(9P + R) = 25/113.
    f, p, r = chrf(["ab"], ["abcd"])
    assert p == pytest.approx(100 * 0.5, abs=1e-12)
    assert r == pytest.approx(100 * 5 / 24, abs=1e-12)
    assert f == pytest.approx(100 * 25 / 113, abs=1e-12)


def test_chrf_ignores_whitespace():
    f, _, _ = chrf(["ab cd"], ["abcd"])
    assert f == pytest.approx(100.0, abs=1e-12)


def test_chrf_matches_bruteforce_on_random_corpora(rng):
    alphabet = list("abcdef ")
    for _ in range(20):
        n = int(rng.integers(1, 5))
        hyps = ["".join(rng.choice(alphabet, size=rng.integers(1, 15))).strip() or "a"
                for _ in range(n)]
        refs = ["".join(rng.choice(alphabet, size=rng.integers(1, 15))).strip() or "b"
                for _ in range(n)]
        got = chrf(hyps, refs)
        want = oracle_chrf(hyps, refs)
        assert got == pytest.approx(want, abs=1e-10)


# ---------------------------------------------------------------------------
# TER

def oracle_lev(a, b):
    n, m = len(a), len(b)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] != b[j - 1]))
        prev = cur
    return prev[m]


def oracle_min_edits(hyp, ref, max_shifts=3):
    """Exhaustive minimum of shifts + edit distance over all shift sequences.

    Blocks must occur contiguously in the reference. Exponential, so
    only for tiny instances.
    """
    allowed = set()
    for length in range(1, len(ref) + 1):
        for i in range(len(ref) - length + 1):
            allowed.add(tuple(ref[i:i + length]))
    best = oracle_lev(hyp, ref)
    frontier = {tuple(hyp)}
    for s in range(1, max_shifts + 1):
        nxt = set()
        for seq in frontier:
            n = len(seq)
            for length in range(1, n + 1):
                for start in range(n - length + 1):
                    if tuple(seq[start:start + length]) not in allowed:
                        continue
                    rest = seq[:start] + seq[start + length:]
                    for dest in range(n - length + 1):
                        if dest != start:
                            nxt.add(rest[:dest] + seq[start:start + length] + rest[dest:])
        if not nxt:
            break
        frontier = nxt
        best = min(best, s + min(oracle_lev(list(c), ref) for c in frontier))
    return best


# Shift fixtures where the greedy search provably reaches the optimum;
# expected edit counts worked out by hand.
TER_SHIFT_CASES = [
    ("b a c d", "a b c d", 1),        # one word moves, zero residual
    ("c d a b", "a b c d", 1),        # block of two moves
    ("e f a b c d", "a b c d e f", 1),
    ("b a c e d f", "a b c d e f", 2),  # two strictly improving shifts
    ("a x c", "a b c", 1),            # substitution only, no useful shift
    ("b a", "a c", 2),                # shifting cannot beat plain edits
    ("a b c d e", "a", 4),            # deletions push the rate past 1
]


def test_ter_identity_is_zero():
    assert ter(["a b c d"], ["a b c d"]) == 0.0


def test_ter_shift_cases_match_exhaustive_enumeration():
    for hyp, ref, expected in TER_SHIFT_CASES:
        h, r = hyp.split(), ref.split()
        assert oracle_min_edits(h, r) == expected, hyp
        assert ter([hyp], [ref]) == pytest.approx(expected / len(r), abs=1e-12)


def test_ter_single_word_shift_rate():
    assert ter(["b a c d"], ["a b c d"]) == pytest.approx(0.25, abs=1e-12)


def test_ter_bounded_by_optimum_and_plain_edit_distance(rng):
    # greedy shifting never beats the exhaustive optimum and never does
    # worse than applying no shifts at all
    for _ in range(60):
        n_ref = int(rng.integers(3, 8))
        ref = [f"w{int(x)}" for x in rng.integers(0, 5, n_ref)]
        hyp = list(ref)
        rng.shuffle(hyp)
        if rng.random() < 0.5:
            hyp[int(rng.integers(0, len(hyp)))] = f"w{int(rng.integers(0, 5))}"
        edits = ter([" ".join(hyp)], [" ".join(ref)]) * len(ref)
        assert oracle_min_edits(hyp, ref) - 1e-9 <= edits <= oracle_lev(hyp, ref) + 1e-9


def test_ter_aggregates_edits_over_corpus():
    hyps = ["b a c d", "a b c"]
    refs = ["a b c d", "a b c"]
    # 1 edit over 4 + 0 edits over 3 reference tokens
    assert ter(hyps, refs) == pytest.approx(1 / 7, abs=1e-12)


def test_ter_rejects_token_free_references():
    with pytest.raises(ValueError, match="no tokens"):
        ter(["a"], [""])


# ---------------------------------------------------------------------------
# Shared corpus-level behavior

def test_metrics_ignore_corpus_order(rng):
    hyps = ["the cat sat on the mat", "a dog runs in the park",
            "b a c d", "two dogs run", "children swim in a lake"]
    refs = ["the cat is on the mat", "a dog runs in the park",
            "a b c d", "two dogs run fast", "children swim in a pond"]
    perm = rng.permutation(len(hyps))
    shuffled_h = [hyps[i] for i in perm]
    shuffled_r = [refs[i] for i in perm]
    assert bleu4(shuffled_h, shuffled_r) == pytest.approx(bleu4(hyps, refs), abs=1e-12)
    assert chrf(shuffled_h, shuffled_r) == pytest.approx(chrf(hyps, refs), abs=1e-12)
    assert ter(shuffled_h, shuffled_r) == pytest.approx(ter(hyps, refs), abs=1e-12)


def test_metrics_reject_empty_or_misaligned_input():
    with pytest.raises(ValueError, match="empty"):
        bleu4([], [])
    with pytest.raises(ValueError, match="differ"):
        chrf(["a"], ["a", "b"])


# ---------------------------------------------------------------------------
# Approximate randomization

AR_REFS = ["the cat is on the mat", "a dog runs in the park",
           "two dogs run in the snow", "children swim in a lake"]
AR_SYS_A = ["the cat is on the mat", "a dog runs in the gras",
            "two dogs walk in the snow", "children swim in a lake"]
AR_SYS_B = ["the cat sat on a mat", "a dog runs in the park",
            "two dogs run in snow", "kids swim in a lake"]


def oracle_exhaustive_p(score_fn, sys_a, sys_b, refs):
    n = len(refs)
    observed = abs(score_fn(sys_a, refs) - score_fn(sys_b, refs))
    hits = 0
    for mask in range(1 << n):
        sa = [sys_b[i] if (mask >> i) & 1 else sys_a[i] for i in range(n)]
        sb = [sys_a[i] if (mask >> i) & 1 else sys_b[i] for i in range(n)]
        if abs(score_fn(sa, refs) - score_fn(sb, refs)) >= observed - 1e-12:
            hits += 1
    return (hits + 1) / ((1 << n) + 1)


def test_randomization_identical_systems_give_p_one():
    p = approx_randomization("bleu", AR_SYS_A, list(AR_SYS_A), AR_REFS, trials=200, seed=5)
    assert p == 1.0


def test_randomization_is_seed_deterministic():
    a = approx_randomization("bleu", AR_SYS_A, AR_SYS_B, AR_REFS, trials=300, seed=11)
    b = approx_randomization("bleu", AR_SYS_A, AR_SYS_B, AR_REFS, trials=300, seed=11)
    assert a == b
    assert 0.0 < a <= 1.0


def test_randomization_exhaustive_matches_direct_enumeration():
    # swapping whole sentences and rescoring must agree with the
    # aggregated-statistics implementation on every mask
    scorers = {
        "bleu": lambda h, r: bleu4(h, r),
        "chrf": lambda h, r: chrf(h, r)[0],
        "ter": lambda h, r: ter(h, r),
    }
    for metric, fn in scorers.items():
        got = approx_randomization(metric, AR_SYS_A, AR_SYS_B, AR_REFS, exhaustive=True)
        want = oracle_exhaustive_p(fn, AR_SYS_A, AR_SYS_B, AR_REFS)
        assert got == pytest.approx(want, abs=1e-12), metric


def test_randomization_input_validation():
    with pytest.raises(ValueError, match="unknown metric"):
        approx_randomization("meteor", AR_SYS_A, AR_SYS_B, AR_REFS)
    with pytest.raises(ValueError, match="trials"):
        approx_randomization("bleu", AR_SYS_A, AR_SYS_B, AR_REFS, trials=0)
    with pytest.raises(ValueError, match="exhaustive"):
        approx_randomization("bleu", ["a"] * 21, ["b"] * 21, ["c"] * 21, exhaustive=True)
