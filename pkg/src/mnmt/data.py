"""Text pipeline: tokenizer, byte-pair encoding, vocabularies, corpora.

Raw sentence pairs go through rule-based tokenization, joint subword
segmentation learned on both languages together, a length filter, and
id mapping against frequency-ranked vocabularies with four reserved
ids. Everything is deterministic: same inputs give byte-identical
prepared corpora, and every discarded sentence is logged with its line
number and reason.
"""

from __future__ import annotations

import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
RESERVED = (PAD, UNK, BOS, EOS)

MAX_SENTENCE_TOKENS = 80

_WORD_CATEGORIES = ("L", "N", "M")  # letters, digits, combining marks


def tokenize(text: str):
    """Split a sentence into word and punctuation tokens, case preserved.

    NFC-normalizes, then groups runs of letters/digits/marks into words;
    every other non-space character becomes its own token.
    """
    text = unicodedata.normalize("NFC", text)
    tokens = []
    word = []
    for ch in text:
        if ch.isspace():
            if word:
                tokens.append("".join(word))
                word = []
        elif unicodedata.category(ch)[0] in _WORD_CATEGORIES:
            word.append(ch)
        else:
            if word:
                tokens.append("".join(word))
                word = []
            tokens.append(ch)
    if word:
        tokens.append("".join(word))
    return tokens


# ---------------------------------------------------------------------------
# Byte-pair encoding

_END = "</w>"   # internal end-of-word symbol
CONTINUE = "@@"  # suffix marking a non-final subword piece


@dataclass
class BpeModel:
    """Learned merge list in application order.

    merge_freqs records the pair frequency at the time each merge was
    learned; vocab_threshold (0 = off) drops merges learned below it at
    apply time, degrading gracefully toward characters.
    """

    merges: list = field(default_factory=list)
    merge_freqs: list = field(default_factory=list)
    vocab_threshold: int = 0

    def effective_merges(self):
        if self.vocab_threshold <= 0:
            return self.merges
        return [m for m, f in zip(self.merges, self.merge_freqs) if f >= self.vocab_threshold]

    def to_dict(self):
        return {
            "merges": [list(m) for m in self.merges],
            "merge_freqs": list(self.merge_freqs),
            "vocab_threshold": self.vocab_threshold,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            merges=[tuple(m) for m in d["merges"]],
            merge_freqs=list(d["merge_freqs"]),
            vocab_threshold=int(d.get("vocab_threshold", 0)),
        )


def _word_symbols(word: str):
    chars = list(word)
    chars[-1] = chars[-1] + _END
    return tuple(chars)


def _pair_counts(word_freqs):
    pairs = Counter()
    for symbols, freq in word_freqs.items():
        for a, b in zip(symbols, symbols[1:]):
            pairs[(a, b)] += freq
    return pairs


def _merge_word(symbols, pair):
    a, b = pair
    merged = a + b
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i < n - 1 and symbols[i] == a and symbols[i + 1] == b:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_learn(token_lines, num_merges: int, vocab_threshold: int = 0) -> BpeModel:
    """Learn subword merges from tokenized lines (any iterable of token lists).

    Each step merges the most frequent adjacent symbol pair; ties are
    broken by lexicographically smallest pair. num_merges=0 leaves the
    segmentation at characters plus the end-of-word marker.
    """
    if num_merges < 0:
        raise ValueError(f"num_merges must be >= 0, got {num_merges}")
    words = Counter()
    for line in token_lines:
        words.update(line)
    word_freqs = {_word_symbols(w): f for w, f in words.items()}
    model = BpeModel(vocab_threshold=vocab_threshold)
    for _ in range(num_merges):
        pairs = _pair_counts(word_freqs)
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
        pair, freq = best
        model.merges.append(pair)
        model.merge_freqs.append(freq)
        word_freqs = {_merge_word(sym, pair): f for sym, f in word_freqs.items()}
    return model


def _emit_pieces(symbols):
    pieces = []
    for i, s in enumerate(symbols):
        if i == len(symbols) - 1:
            assert s.endswith(_END)
            pieces.append(s[: -len(_END)])
        else:
            pieces.append(s + CONTINUE)
    return pieces


def bpe_apply(model: BpeModel, tokens):
    """Segment word tokens into subword pieces using the learned merges.

    Non-final pieces carry the continuation suffix. Unseen characters
    pass through as single-character pieces.
    """
    merges = model.effective_merges()
    cache = {}
    out = []
    for tok in tokens:
        pieces = cache.get(tok)
        if pieces is None:
            symbols = _word_symbols(tok)
            for pair in merges:
                if len(symbols) == 1:
                    break
                symbols = _merge_word(symbols, pair)
            pieces = _emit_pieces(symbols)
            cache[tok] = pieces
        out.extend(pieces)
    return out


def bpe_join(subwords):
    """Inverse of bpe_apply: glue continuation pieces back into words."""
    words = []
    buf = []
    for piece in subwords:
        if piece.endswith(CONTINUE):
            buf.append(piece[: -len(CONTINUE)])
        else:
            buf.append(piece)
            words.append("".join(buf))
            buf = []
    if buf:  # dangling continuation at sequence end: keep what we have
        words.append("".join(buf))
    return words


# ---------------------------------------------------------------------------
# Vocabulary

class Vocabulary:
    """Frequency-ranked token table with four reserved ids.

    id 0 <pad>, 1 <unk>, 2 <s>, 3 </s>; content tokens follow ordered
    by descending frequency, ties broken lexicographically.
    """

    def __init__(self, tokens):
        self._tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def from_counts(cls, counts: Counter, size: int | None = None):
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        toks = [t for t, _ in ranked if t not in RESERVED]
        if size is not None:
            if size < len(RESERVED):
                raise ValueError(f"vocabulary size {size} cannot hold the reserved ids")
            toks = toks[: size - len(RESERVED)]
        return cls(toks)

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, tok):
        return tok in self._ids

    def id(self, tok) -> int:
        return self._ids.get(tok, UNK_ID)

    def token(self, i) -> str:
        return self._tokens[i]

    def encode(self, tokens):
        return [self.id(t) for t in tokens]

    def decode(self, ids):
        return [self._tokens[i] for i in ids]

    def to_list(self):
        return list(self._tokens)

    @classmethod
    def from_list(cls, tokens):
        if list(tokens[:4]) != list(RESERVED):
            raise ValueError("serialized vocabulary must start with the reserved ids")
        return cls(tokens[4:])


# ---------------------------------------------------------------------------
# Corpus building

@dataclass
class TrainingTriple:
    """One training example: id sequences plus an optional image handle."""

    src_ids: list
    tgt_ids: list
    image_id: str | None = None


@dataclass
class DiscardRecord:
    line_no: int  # 1-based, original file order
    side: str     # "src" | "tgt"
    length: int
    reason: str


@dataclass
class PreparedCorpus:
    triples: list
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    bpe: BpeModel
    discarded: list
    src_token_lines: list  # kept lines, subword tokens
    tgt_token_lines: list
    tgt_word_lines: list   # kept lines, word tokens (reference side for scoring)


def build_corpus(src_lines, tgt_lines, index_ids=None, *, num_merges=1000,
                 src_vocab_size=None, tgt_vocab_size=None, shared_vocab=False,
                 max_len=MAX_SENTENCE_TOKENS, bpe: BpeModel | None = None,
                 src_vocab: Vocabulary | None = None,
                 tgt_vocab: Vocabulary | None = None) -> PreparedCorpus:
    """Tokenize, segment, filter, and id-map a parallel corpus.

    Learns joint BPE over both sides unless an existing model is passed
    (validation sets reuse the training artifacts the same way via the
    vocab arguments). Sentences whose source or target exceeds max_len
    subword tokens are discarded and logged. index_ids, when given, must
    align 1:1 with the input lines and carries image ids forward.
    """
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"parallel corpus misaligned: {len(src_lines)} source lines"
                         f" vs {len(tgt_lines)} target lines")
    if index_ids is not None and len(index_ids) != len(src_lines):
        raise ValueError(f"index has {len(index_ids)} entries for {len(src_lines)} sentences")

    src_tok = [tokenize(l) for l in src_lines]
    tgt_tok = [tokenize(l) for l in tgt_lines]
    if bpe is None:
        bpe = bpe_learn(src_tok + tgt_tok, num_merges)
    src_sub = [bpe_apply(bpe, t) for t in src_tok]
    tgt_sub = [bpe_apply(bpe, t) for t in tgt_tok]

    kept = []
    discarded = []
    for i, (s, t) in enumerate(zip(src_sub, tgt_sub)):
        line_no = i + 1
        if len(s) == 0 or len(t) == 0:
            side = "src" if len(s) == 0 else "tgt"
            discarded.append(DiscardRecord(line_no, side, 0, "empty after tokenization"))
        elif len(s) > max_len:
            discarded.append(DiscardRecord(line_no, "src", len(s), f"longer than {max_len} tokens"))
        elif len(t) > max_len:
            discarded.append(DiscardRecord(line_no, "tgt", len(t), f"longer than {max_len} tokens"))
        else:
            kept.append(i)
    for rec in discarded:
        log.info("discarding line %d (%s side, %d tokens): %s",
                 rec.line_no, rec.side, rec.length, rec.reason)

    kept_src = [src_sub[i] for i in kept]
    kept_tgt = [tgt_sub[i] for i in kept]
    if src_vocab is None or tgt_vocab is None:
        if shared_vocab:
            joint = Counter()
            for line in kept_src + kept_tgt:
                joint.update(line)
            size = max(filter(None, (src_vocab_size, tgt_vocab_size)), default=None)
            shared = Vocabulary.from_counts(joint, size)
            src_vocab, tgt_vocab = shared, shared
        else:
            sc, tc = Counter(), Counter()
            for line in kept_src:
                sc.update(line)
            for line in kept_tgt:
                tc.update(line)
            src_vocab = Vocabulary.from_counts(sc, src_vocab_size)
            tgt_vocab = Vocabulary.from_counts(tc, tgt_vocab_size)

    triples = []
    for pos, i in enumerate(kept):
        triples.append(TrainingTriple(
            src_ids=src_vocab.encode(kept_src[pos]),
            tgt_ids=tgt_vocab.encode(kept_tgt[pos]),
            image_id=None if index_ids is None else str(index_ids[i]),
        ))
    return PreparedCorpus(
        triples=triples,
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        bpe=bpe,
        discarded=discarded,
        src_token_lines=kept_src,
        tgt_token_lines=kept_tgt,
        tgt_word_lines=[tgt_tok[i] for i in kept],
    )


def load_lines(path):
    """Read a UTF-8 text file into a list of lines without newlines."""
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def save_lines(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
