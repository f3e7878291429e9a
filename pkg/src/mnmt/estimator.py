"""Scikit-learn style front door: fit on sentence pairs, predict text.

MultimodalTranslator wraps the whole pipeline (tokenizer, subword
model, vocabularies, encoder-decoder, training loop, beam search)
behind the familiar estimator contract. Defaults are desk scale so a
fit on a few dozen pairs finishes in seconds; turn the dials up for a
real corpus.

    >>> tr = MultimodalTranslator(max_epochs=50, random_state=0)
    >>> tr.fit(["ein hund", "eine katze"], ["a dog", "a cat"])
    >>> tr.predict(["ein hund"])
    ['a dog']

With multimodal=True, fit/predict/score take a parallel `features`
argument: one (rows, dim) array of spatial image features per
sentence, or an (n, rows, dim) array.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import check_feature_blocks, check_parallel, check_sentence_list
from .data import build_corpus, tokenize
from .metrics import bleu4
from .model import ModelConfig, NmtModel
from .tensor import using_dtype
from .training import (
    EarlyStopState,
    TrainConfig,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .translate import translate_lines


def _sample_ids(n):
    return [f"sample-{i:06d}" for i in range(n)]


class MultimodalTranslator(BaseEstimator):
    """Attention NMT estimator, optionally grounded in image features.

    Parameters mirror the underlying recipe: model dimensions, subword
    merge count, vocabulary caps, and the training schedule. All are
    plain constructor attributes so get_params/set_params/clone work.
    """

    def __init__(self, *, emb_dim=64, enc_dim=64, dec_dim=64, att_dim=64,
                 proj_dim=64, multimodal=False, num_merges=200,
                 src_vocab_size=None, tgt_vocab_size=None, shared_vocab=False,
                 max_epochs=20, batch_size=None, dropout_p=0.0, patience=20,
                 clip_norm=1.0, precision="float32", beam_size=4,
                 max_decode_len=80, validation_fraction=0.0, random_state=0):
        self.emb_dim = emb_dim
        self.enc_dim = enc_dim
        self.dec_dim = dec_dim
        self.att_dim = att_dim
        self.proj_dim = proj_dim
        self.multimodal = multimodal
        self.num_merges = num_merges
        self.src_vocab_size = src_vocab_size
        self.tgt_vocab_size = tgt_vocab_size
        self.shared_vocab = shared_vocab
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.dropout_p = dropout_p
        self.patience = patience
        self.clip_norm = clip_norm
        self.precision = precision
        self.beam_size = beam_size
        self.max_decode_len = max_decode_len
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    # -- fitting ----------------------------------------------------------

    def fit(self, X, y, features=None):
        """Learn subwords, vocabularies, and weights from sentence pairs.

        X and y are parallel lists of raw source and target sentences.
        With validation_fraction > 0 the tail of the (unshuffled) corpus
        is held out to drive early stopping; otherwise the training set
        itself is scored each epoch.
        """
        X, y = check_parallel(X, y)
        index_ids = None
        feature_map = None
        rows = dim = None
        if self.multimodal:
            blocks, rows, dim = check_feature_blocks(features, len(X))
            index_ids = _sample_ids(len(X))
            feature_map = dict(zip(index_ids, blocks))
        elif features is not None:
            raise ValueError("features were given but multimodal=False")

        corpus = build_corpus(
            X, y, index_ids,
            num_merges=self.num_merges,
            src_vocab_size=self.src_vocab_size,
            tgt_vocab_size=self.tgt_vocab_size,
            shared_vocab=self.shared_vocab,
        )
        if not corpus.triples:
            raise ValueError("every sentence pair was filtered out; nothing to fit")

        config = ModelConfig(
            src_vocab_size=len(corpus.src_vocab),
            tgt_vocab_size=len(corpus.tgt_vocab),
            emb_dim=self.emb_dim, enc_dim=self.enc_dim, dec_dim=self.dec_dim,
            att_dim=self.att_dim, proj_dim=self.proj_dim,
            multimodal=self.multimodal,
            feature_rows=rows or 196, feature_dim=dim or 1024,
        )
        tc = TrainConfig(
            max_epochs=self.max_epochs, batch_size=self.batch_size,
            dropout_p=self.dropout_p, patience=self.patience,
            seed=self.random_state, precision=self.precision,
            clip_norm=self.clip_norm, max_decode_len=self.max_decode_len,
        )
        n_val = int(len(corpus.triples) * self.validation_fraction)
        if n_val > 0:
            train_triples = corpus.triples[:-n_val]
            val_triples = corpus.triples[-n_val:]
            val_refs = corpus.tgt_word_lines[-n_val:]
            if not train_triples:
                raise ValueError("validation_fraction leaves no training data")
        else:
            train_triples = corpus.triples
            val_triples = corpus.triples
            val_refs = corpus.tgt_word_lines

        with using_dtype(self.precision):
            model = NmtModel(config, init_params(config, self.random_state))
            result = train(
                model, train_triples, tc,
                val_triples=val_triples, val_refs=val_refs,
                features=feature_map,
                tgt_vocab=corpus.tgt_vocab,
            )

        self.model_ = model
        self.config_ = config
        self.src_vocab_ = corpus.src_vocab
        self.tgt_vocab_ = corpus.tgt_vocab
        self.bpe_ = corpus.bpe
        self.history_ = result.history
        self.early_stop_ = result.early
        self.epochs_done_ = result.epochs_done
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this MultimodalTranslator is not fitted; call fit first")

    def _feature_args(self, X, features):
        if not self.multimodal:
            if features is not None:
                raise ValueError("features were given but multimodal=False")
            return None, None
        blocks, _, _ = check_feature_blocks(
            features, len(X), self.config_.feature_rows, self.config_.feature_dim)
        ids = _sample_ids(len(X))
        return dict(zip(ids, blocks)), ids

    # -- inference --------------------------------------------------------

    def predict(self, X, features=None):
        """Translate raw sentences; returns a list of strings."""
        self._require_fitted()
        X = check_sentence_list(X)
        feature_map, ids = self._feature_args(X, features)
        with using_dtype(self.precision):
            return translate_lines(
                self.model_, X, self.src_vocab_, self.tgt_vocab_, self.bpe_,
                features=feature_map, feature_ids=ids,
                beam_size=self.beam_size, max_len=self.max_decode_len)

    def score(self, X, y, features=None):
        """Corpus BLEU4 (0..100) of predict(X) against references y."""
        X, y = check_parallel(X, y)
        hyps = self.predict(X, features=features)
        return bleu4([tokenize(h) for h in hyps], [tokenize(r) for r in y])

    # -- persistence ------------------------------------------------------

    def save(self, path):
        """Write the fitted pipeline as a single checkpoint file."""
        self._require_fitted()
        save_checkpoint(
            path, self.model_,
            early=getattr(self, "early_stop_", None) or EarlyStopState(),
            src_vocab=self.src_vocab_, tgt_vocab=self.tgt_vocab_, bpe=self.bpe_,
            seed=self.random_state, epochs_done=getattr(self, "epochs_done_", 0),
            precision=self.precision)
        return path

    @classmethod
    def load(cls, path):
        """Rebuild a fitted estimator from a checkpoint file."""
        ckpt = load_checkpoint(path)
        if ckpt.src_vocab is None or ckpt.tgt_vocab is None:
            raise ValueError("checkpoint has no vocabularies; it was not saved by an estimator")
        cfg = ckpt.model.config
        est = cls(emb_dim=cfg.emb_dim, enc_dim=cfg.enc_dim, dec_dim=cfg.dec_dim,
                  att_dim=cfg.att_dim, proj_dim=cfg.proj_dim,
                  multimodal=cfg.multimodal,
                  precision=ckpt.meta.get("precision", "float32"),
                  random_state=ckpt.meta["rng"]["seed"])
        est.model_ = ckpt.model
        est.config_ = cfg
        est.src_vocab_ = ckpt.src_vocab
        est.tgt_vocab_ = ckpt.tgt_vocab
        est.bpe_ = ckpt.bpe
        est.history_ = ckpt.meta.get("history", [])
        est.early_stop_ = ckpt.early
        est.epochs_done_ = ckpt.epochs_done
        return est
