"""Corpus evaluation: BLEU4, chrF3, TER, and paired significance.

All metrics are corpus-level: per-sentence sufficient statistics are
aggregated before scoring, so corpus order never matters. Inputs are
case-sensitive tokenized sentences, either whitespace-joined strings or
token lists, with one reference per hypothesis.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

BLEU_ORDER = 4
CHRF_ORDER = 6
CHRF_BETA = 3.0
MAX_SHIFT_LEN = 10


def _as_token_lines(seqs, name):
    out = []
    for s in seqs:
        if isinstance(s, str):
            out.append(s.split())
        else:
            out.append([str(t) for t in s])
    if not out:
        raise ValueError(f"{name} is empty; metrics need at least one sentence")
    return out


def _check_parallel(hyps, refs):
    if len(hyps) != len(refs):
        raise ValueError(f"hypothesis/reference counts differ: {len(hyps)} vs {len(refs)}")


# ---------------------------------------------------------------------------
# BLEU4

@dataclass
class NGramCounts:
    """Per-order n-gram tallies for one hypothesis/reference pair."""

    hyp: dict    # order -> Counter
    ref: dict
    clipped: dict  # order -> Counter, min(hyp, ref) per n-gram

    @classmethod
    def build(cls, hyp_tokens, ref_tokens, max_order=BLEU_ORDER):
        hyp, ref, clipped = {}, {}, {}
        for n in range(1, max_order + 1):
            h = Counter(tuple(hyp_tokens[i:i + n]) for i in range(len(hyp_tokens) - n + 1))
            r = Counter(tuple(ref_tokens[i:i + n]) for i in range(len(ref_tokens) - n + 1))
            hyp[n], ref[n] = h, r
            clipped[n] = Counter({g: min(c, r[g]) for g, c in h.items() if g in r})
        return cls(hyp=hyp, ref=ref, clipped=clipped)


def _bleu_stats(hyp_tokens, ref_tokens):
    """(correct[1..4], total[1..4], hyp_len, ref_len) for one pair."""
    counts = NGramCounts.build(hyp_tokens, ref_tokens)
    correct = np.array([sum(counts.clipped[n].values()) for n in range(1, BLEU_ORDER + 1)], dtype=np.int64)
    total = np.array([max(len(hyp_tokens) - n + 1, 0) for n in range(1, BLEU_ORDER + 1)], dtype=np.int64)
    return np.concatenate([correct, total, [len(hyp_tokens), len(ref_tokens)]])


def _bleu_from_stats(stats) -> float:
    correct = stats[:BLEU_ORDER]
    total = stats[BLEU_ORDER:2 * BLEU_ORDER]
    hyp_len, ref_len = stats[-2], stats[-1]
    if hyp_len == 0:
        return 0.0
    logs = 0.0
    for c, t in zip(correct, total):
        if c == 0 or t == 0:
            return 0.0  # unsmoothed: any empty order zeroes the geometric mean
        logs += np.log(c / t)
    bp = 1.0 if hyp_len > ref_len else float(np.exp(1.0 - ref_len / hyp_len))
    return float(100.0 * bp * np.exp(logs / BLEU_ORDER))


def bleu4(hypotheses, references) -> float:
    """Corpus BLEU with orders 1..4, geometric mean, brevity penalty, no smoothing."""
    hyps = _as_token_lines(hypotheses, "hypotheses")
    refs = _as_token_lines(references, "references")
    _check_parallel(hyps, refs)
    stats = sum(_bleu_stats(h, r) for h, r in zip(hyps, refs))
    return _bleu_from_stats(stats)


# ---------------------------------------------------------------------------
# chrF

def _char_ngrams(tokens, n):
    s = "".join(tokens)  # whitespace never enters the n-grams
    return Counter(s[i:i + n] for i in range(len(s) - n + 1))


def _chrf_stats(hyp_tokens, ref_tokens):
    """Per order: (matched, hyp_total, ref_total), flattened."""
    rows = []
    for n in range(1, CHRF_ORDER + 1):
        h = _char_ngrams(hyp_tokens, n)
        r = _char_ngrams(ref_tokens, n)
        matched = sum((h & r).values())
        rows.append((matched, sum(h.values()), sum(r.values())))
    return np.array(rows, dtype=np.int64).reshape(-1)


def _chrf_from_stats(stats, beta=CHRF_BETA):
    rows = stats.reshape(CHRF_ORDER, 3)
    precisions, recalls = [], []
    for matched, htot, rtot in rows:
        if htot == 0 and rtot == 0:
            continue  # order longer than every sentence on both sides
        precisions.append(matched / htot if htot else 0.0)
        recalls.append(matched / rtot if rtot else 0.0)
    if not precisions:
        return 0.0, 0.0, 0.0
    p = float(np.mean(precisions))
    r = float(np.mean(recalls))
    if p == 0.0 and r == 0.0:
        f = 0.0
    else:
        b2 = beta * beta
        f = (1 + b2) * p * r / (b2 * p + r)
    return 100.0 * f, 100.0 * p, 100.0 * r


def chrf(hypotheses, references, beta=CHRF_BETA):
    """Character 6-gram F-score with recall weighted beta=3.

    Returns (F, precision, recall), each 0..100, where precision and
    recall are averaged over the n-gram orders at corpus level.
    """
    hyps = _as_token_lines(hypotheses, "hypotheses")
    refs = _as_token_lines(references, "references")
    _check_parallel(hyps, refs)
    stats = sum(_chrf_stats(h, r) for h, r in zip(hyps, refs))
    return _chrf_from_stats(stats, beta)


# ---------------------------------------------------------------------------
# TER

def _edit_distance(a, b):
    n, m = len(a), len(b)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[m]


def _ref_spans(ref):
    spans = set()
    for length in range(1, min(len(ref), MAX_SHIFT_LEN) + 1):
        for i in range(len(ref) - length + 1):
            spans.add(tuple(ref[i:i + length]))
    return spans


def _apply_shift(seq, start, length, dest):
    """Move seq[start:start+length] so the block starts at index dest of the remainder."""
    block = seq[start:start + length]
    rest = seq[:start] + seq[start + length:]
    return rest[:dest] + block + rest[dest:]


def _best_shift(hyp, ref, allowed):
    """Best single shift by (resulting edit distance, start, length, dest)."""
    best = None
    n = len(hyp)
    for length in range(1, min(n, MAX_SHIFT_LEN) + 1):
        for start in range(n - length + 1):
            if tuple(hyp[start:start + length]) not in allowed:
                continue
            for dest in range(n - length + 1):
                if dest == start:
                    continue
                cand = _apply_shift(hyp, start, length, dest)
                d = _edit_distance(cand, ref)
                key = (d, start, length, dest)
                if best is None or key < best[0]:
                    best = (key, cand)
    return best


def _ter_edits(hyp_tokens, ref_tokens):
    """(edits, ref_len) with greedy shifts then word edit distance.

    Repeatedly applies the shift that most reduces edit distance, at a
    cost of one edit per shift, while it strictly lowers total edits.
    Only blocks that appear contiguously in the reference may move.
    """
    cur = list(hyp_tokens)
    allowed = _ref_spans(ref_tokens)
    shifts = 0
    dist = _edit_distance(cur, ref_tokens)
    while dist > 0:
        found = _best_shift(cur, ref_tokens, allowed)
        if found is None or found[0][0] + 1 >= dist:
            break
        (dist, _, _, _), cur = found
        shifts += 1
    return shifts + dist, len(ref_tokens)


def ter(hypotheses, references) -> float:
    """Translation edit rate: (edits incl. shifts) / reference length."""
    hyps = _as_token_lines(hypotheses, "hypotheses")
    refs = _as_token_lines(references, "references")
    _check_parallel(hyps, refs)
    edits = 0
    ref_len = 0
    for h, r in zip(hyps, refs):
        e, rl = _ter_edits(h, r)
        edits += e
        ref_len += rl
    if ref_len == 0:
        raise ValueError("references contain no tokens")
    return float(edits / ref_len)


# ---------------------------------------------------------------------------
# Approximate randomization

_METRIC_STATS = {
    "bleu": (_bleu_stats, lambda s: _bleu_from_stats(s)),
    "chrf": (_chrf_stats, lambda s: _chrf_from_stats(s)[0]),
    "ter": (lambda h, r: np.array(_ter_edits(h, r), dtype=np.int64),
            lambda s: float(s[0] / s[1]) if s[1] else 0.0),
}


def approx_randomization(metric, hyp_a, hyp_b, references, trials=10000,
                         seed=0, exhaustive=False) -> float:
    """Paired significance by random per-sentence output swaps.

    Per trial each sentence's outputs are swapped between the systems
    with a fair coin; the metric delta is recomputed from aggregated
    per-sentence statistics. p = (count(|delta| >= |observed|) + 1) /
    (trials + 1). ``exhaustive`` enumerates all 2^n swap patterns
    instead (tiny corpora only) and ignores trials/seed.
    """
    if metric not in _METRIC_STATS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {sorted(_METRIC_STATS)}")
    stat_fn, score_fn = _METRIC_STATS[metric]
    ha = _as_token_lines(hyp_a, "hyp_a")
    hb = _as_token_lines(hyp_b, "hyp_b")
    refs = _as_token_lines(references, "references")
    _check_parallel(ha, refs)
    _check_parallel(hb, refs)
    stats_a = np.stack([stat_fn(h, r) for h, r in zip(ha, refs)])
    stats_b = np.stack([stat_fn(h, r) for h, r in zip(hb, refs)])
    n = stats_a.shape[0]
    observed = abs(score_fn(stats_a.sum(axis=0)) - score_fn(stats_b.sum(axis=0)))

    def delta(swap_mask):
        sa = np.where(swap_mask[:, None], stats_b, stats_a).sum(axis=0)
        sb = np.where(swap_mask[:, None], stats_a, stats_b).sum(axis=0)
        return abs(score_fn(sa) - score_fn(sb))

    if exhaustive:
        if n > 20:
            raise ValueError(f"exhaustive mode limited to 20 sentences, got {n}")
        total = 1 << n
        at_least = sum(delta(np.array([(m >> i) & 1 for i in range(n)], dtype=bool))
                       >= observed - 1e-12 for m in range(total))
        return (at_least + 1) / (total + 1)

    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    at_least = 0
    for _ in range(trials):
        if delta(rng.random(n) < 0.5) >= observed - 1e-12:
            at_least += 1
    return (at_least + 1) / (trials + 1)
