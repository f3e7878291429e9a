"""End-to-end translation of raw text, back-translation, attention dumps.

These helpers run the full inference pipeline: tokenize, apply the
subword model, map to vocabulary ids (unknowns become the UNK id),
beam-decode, undo subword segmentation, and join with single spaces.
Empty input lines pass through as empty output lines so file
alignment survives round trips.
"""

from __future__ import annotations

import json

import numpy as np

from .data import (
    MAX_SENTENCE_TOKENS,
    BpeModel,
    Vocabulary,
    bpe_apply,
    bpe_join,
    load_lines,
    save_lines,
    tokenize,
)
from .decoder import beam_search, greedy_decode
from .model import NmtModel


def encode_source_line(line: str, src_vocab: Vocabulary, bpe: BpeModel | None):
    """Raw text to (subwords, ids). Sources longer than the model's
    length cap are truncated rather than rejected at inference time."""
    tokens = tokenize(line)
    subwords = bpe_apply(bpe, tokens) if bpe is not None else tokens
    subwords = subwords[:MAX_SENTENCE_TOKENS]
    return subwords, src_vocab.encode(subwords)


def _feature_lookup(features, feature_ids, i, n_lines):
    if features is None:
        raise ValueError("multimodal model needs --features at translation time")
    if feature_ids is None:
        raise ValueError("multimodal translation needs an image id per line")
    if len(feature_ids) != n_lines:
        raise ValueError(f"index has {len(feature_ids)} ids for {n_lines} input lines")
    image_id = feature_ids[i]
    if image_id not in features:
        raise ValueError(f"no feature block for image_id {image_id!r} (line {i + 1})")
    return features[image_id]


def translate_lines(model: NmtModel, lines, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                    bpe: BpeModel | None = None, *, features=None, feature_ids=None,
                    beam_size: int = 12, max_len: int = 80):
    """Translate a list of raw text lines; returns one string per line."""
    out = []
    for i, line in enumerate(lines):
        if not line.strip():
            out.append("")
            continue
        _, src_ids = encode_source_line(line, src_vocab, bpe)
        feats = None
        if model.config.multimodal:
            feats = _feature_lookup(features, feature_ids, i, len(lines))
        hyp = beam_search(model, src_ids, features=feats, beam=beam_size, max_len=max_len)
        subwords = tgt_vocab.decode(hyp.tokens)
        out.append(" ".join(bpe_join(subwords)))
    return out


def back_translate_file(model: NmtModel, input_path, output_path,
                        src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                        bpe: BpeModel | None = None, *, features=None,
                        feature_ids=None, beam_size: int = 12, max_len: int = 80) -> int:
    """Translate a monolingual file line by line to build synthetic
    parallel data. Preserves line count exactly (empty in, empty out);
    returns the number of lines written."""
    lines = load_lines(input_path)
    translated = translate_lines(model, lines, src_vocab, tgt_vocab, bpe,
                                 features=features, feature_ids=feature_ids,
                                 beam_size=beam_size, max_len=max_len)
    save_lines(output_path, translated)
    return len(translated)


def dump_attention(model: NmtModel, lines, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                   bpe: BpeModel | None, output_path, *, features=None,
                   feature_ids=None, max_len: int = 80):
    """Greedy-decode each line and record its alignment weights.

    Writes JSON Lines: one record per sentence with the source
    subwords, emitted subwords, per-step source attention rows, and
    (multimodal) per-step image attention rows plus the gate value
    sequence; then a final summary record with the corpus-level share
    of steps whose gate exceeded 0.5 and 0.8. Returns the summary dict.
    """
    all_betas = []
    with open(output_path, "w", encoding="utf-8") as fh:
        for i, line in enumerate(lines):
            if not line.strip():
                fh.write(json.dumps({"line": i + 1, "source_subwords": [],
                                     "output_subwords": [], "source_attention": []}) + "\n")
                continue
            subwords, src_ids = encode_source_line(line, src_vocab, bpe)
            feats = None
            if model.config.multimodal:
                feats = _feature_lookup(features, feature_ids, i, len(lines))
            hyp = greedy_decode(model, src_ids, features=feats, max_len=max_len)
            record = {
                "line": i + 1,
                "source_subwords": subwords,
                "output_subwords": tgt_vocab.decode(hyp.tokens),
                "source_attention": [s.alpha_src.tolist() for s in hyp.steps],
            }
            if model.config.multimodal:
                record["image_attention"] = [s.alpha_img.tolist() for s in hyp.steps]
                record["beta"] = [s.beta for s in hyp.steps]
                all_betas.extend(s.beta for s in hyp.steps)
            fh.write(json.dumps(record) + "\n")
        summary = {"summary": True, "sentences": len(lines)}
        if model.config.multimodal:
            arr = np.array(all_betas) if all_betas else np.zeros(0)
            summary["beta_gt_half"] = float((arr > 0.5).mean()) if arr.size else None
            summary["beta_gt_08"] = float((arr > 0.8).mean()) if arr.size else None
        fh.write(json.dumps(summary) + "\n")
    return summary
