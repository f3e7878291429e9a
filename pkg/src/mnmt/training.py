"""Training recipe: initialization, ADADELTA, tied dropout, early stopping.

The loop is deterministic given a seed: shuffling and per-sentence
dropout masks derive from SeedSequence(seed, spawn_key), so a run can
be reproduced or resumed exactly from {seed, epochs_done}. Gradients
accumulate sentence by sentence inside a minibatch (no padding exists),
are clipped by global norm, and one ADADELTA step is taken per batch.
Validation BLEU uses greedy decoding; training halts once the best
epoch is ``patience`` epochs in the past.

Checkpoint format (``.npz`` zip of named arrays, format_version 1):
  meta            uint8 bytes of a UTF-8 JSON object with keys
                  format_version, model_config, optimizer {rho, eps},
                  rng {seed, epochs_done}, early_stop, precision,
                  src_vocab, tgt_vocab, bpe, history
  param/<name>    one array per model parameter, exact dtype preserved
  opt/g2/<name>   ADADELTA running squared-gradient accumulators
  opt/dx2/<name>  ADADELTA running squared-update accumulators
Arrays round-trip bit-exactly; reloading reproduces validation loss to
the last bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import BpeModel, Vocabulary, bpe_join
from .decoder import greedy_decode
from .metrics import bleu4
from .model import DropoutMasks, ModelConfig, ModelParams, NmtModel, parameter_specs
from .tensor import (
    NonFiniteError,
    Tape,
    backward,
    constant,
    default_dtype,
    parameter,
    using_dtype,
)

GAUSSIAN_STDDEV = 0.01
ADADELTA_RHO = 0.95
ADADELTA_EPS = 1e-6


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; message carries epoch, batch, and norms."""


def orthogonal(n, rng):
    """Random orthogonal (n, n) matrix via QR with sign-fixed diagonal."""
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Fresh parameter table under the published recipe.

    Non-recurrent weights ~ N(0, 0.01^2); square recurrent matrices
    orthogonal; biases zero. Draws in float64, cast to the active
    precision. Deterministic in (config, seed).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dtype = default_dtype()
    tensors = {}
    for spec in parameter_specs(config):
        if spec.init == "gaussian":
            a = rng.normal(0.0, GAUSSIAN_STDDEV, size=spec.shape)
        elif spec.init == "orthogonal":
            if len(spec.shape) != 2 or spec.shape[0] != spec.shape[1]:
                raise ValueError(f"orthogonal init needs a square matrix, got {spec.shape} for {spec.name}")
            a = orthogonal(spec.shape[0], rng)
        elif spec.init == "zero":
            a = np.zeros(spec.shape)
        else:
            raise ValueError(f"unknown init kind {spec.init!r}")
        tensors[spec.name] = parameter(a.astype(dtype))
    return ModelParams(tensors)


# ---------------------------------------------------------------------------
# Optimizer

@dataclass
class AdadeltaState:
    """Running accumulators for ADADELTA, keyed like the parameter table."""

    g2: dict
    dx2: dict
    rho: float = ADADELTA_RHO
    eps: float = ADADELTA_EPS

    @classmethod
    def for_params(cls, params: ModelParams, rho=ADADELTA_RHO, eps=ADADELTA_EPS):
        return cls(
            g2={n: np.zeros_like(t.data) for n, t in params.items()},
            dx2={n: np.zeros_like(t.data) for n, t in params.items()},
            rho=rho, eps=eps,
        )


def adadelta_update(state: AdadeltaState, params: ModelParams):
    """One ADADELTA step from the accumulated grads, in place.

    E[g^2] <- rho E[g^2] + (1-rho) g^2
    dx = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
    E[dx^2] <- rho E[dx^2] + (1-rho) dx^2
    """
    rho, eps = state.rho, state.eps
    for name in sorted(state.g2):
        t = params[name]
        g = t.grad
        g2 = state.g2[name]
        dx2 = state.dx2[name]
        g2 *= rho
        g2 += (1.0 - rho) * g * g
        dx = -np.sqrt(dx2 + eps) / np.sqrt(g2 + eps) * g
        dx2 *= rho
        dx2 += (1.0 - rho) * dx * dx
        t.data += dx


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    for _, t in params.items():
        total += float((t.grad * t.grad).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, t in params.items():
            t.grad *= factor
    return norm


# ---------------------------------------------------------------------------
# Dropout

def make_dropout_masks(config: ModelConfig, dropout_p: float, seed: int, step: int) -> DropoutMasks:
    """Per-sentence masks for the four dropout sites, tied across time.

    Sites: encoder RNN state (one mask per direction), decoder RNN
    state, image feature channels (multimodal only), and the output
    projection before the softmax. Values are Bernoulli(1-p)/(1-p).
    Deterministic in (seed, step); step identifies the sentence.
    """
    if not 0.0 <= dropout_p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {dropout_p}")
    if dropout_p == 0.0:
        return DropoutMasks()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(step),)))
    keep = 1.0 - dropout_p

    def draw(size):
        return constant((rng.random(size) < keep).astype(default_dtype()) / keep)

    return DropoutMasks(
        enc_fwd=draw(config.enc_dim),
        enc_bwd=draw(config.enc_dim),
        dec=draw(config.dec_dim),
        img=draw(config.feature_dim) if config.multimodal else None,
        out=draw(config.proj_dim),
    )


# ---------------------------------------------------------------------------
# Early stopping

@dataclass
class EarlyStopState:
    """Best validation BLEU seen so far and the distance from it."""

    best_bleu: float = float("-inf")
    best_epoch: int = -1
    epochs_since_improvement: int = 0

    def update(self, epoch: int, val_bleu: float):
        if val_bleu > self.best_bleu:
            self.best_bleu = val_bleu
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
            return True
        self.epochs_since_improvement = epoch - self.best_epoch
        return False

    def should_stop(self, patience: int) -> bool:
        return self.best_epoch >= 0 and self.epochs_since_improvement >= patience


# ---------------------------------------------------------------------------
# The loop

@dataclass
class TrainConfig:
    """Knobs of the training recipe (architecture lives in ModelConfig)."""

    max_epochs: int = 100
    batch_size: int | None = None   # default 80 text-only, 40 multimodal
    dropout_p: float = 0.5
    patience: int = 20
    seed: int = 13
    precision: str = "float32"
    rho: float = ADADELTA_RHO
    eps: float = ADADELTA_EPS
    clip_norm: float = 1.0          # 0 disables clipping
    eval_every: int = 1
    max_decode_len: int = 80

    def resolved_batch_size(self, multimodal: bool) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 40 if multimodal else 80


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_bleu: float | None = None
    beta_gt_half: float | None = None
    beta_gt_08: float | None = None


@dataclass
class TrainResult:
    history: list
    opt: AdadeltaState
    early: EarlyStopState
    epochs_done: int
    stopped_early: bool


def _shuffle(n, seed, epoch):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(epoch), 0xABCD)))
    return rng.permutation(n)


def _feature_block(features, triple):
    if triple.image_id is None:
        raise ValueError("multimodal training needs an image_id on every sentence")
    try:
        return features[triple.image_id]
    except (KeyError, TypeError):
        raise ValueError(f"no feature block for image_id {triple.image_id!r}")


def _param_norm_diagnostics(params: ModelParams, top=3):
    norms = sorted(((float(np.linalg.norm(t.data)), n) for n, t in params.items()), reverse=True)
    return ", ".join(f"{n}={v:.3g}" for v, n in norms[:top])


def validation_bleu(model: NmtModel, val_triples, val_refs, tgt_vocab: Vocabulary,
                    features=None, max_len=80):
    """Greedy-decode the validation set and score corpus BLEU4.

    Returns (bleu, beta_fractions) where beta_fractions is (share of
    steps with beta > 0.5, share with beta > 0.8) or None for text-only
    models. References are word-token lines.
    """
    if len(val_triples) != len(val_refs):
        raise ValueError(f"validation refs misaligned: {len(val_triples)} vs {len(val_refs)}")
    hyps = []
    betas = []
    for triple in val_triples:
        feats = _feature_block(features, triple) if model.config.multimodal else None
        hyp = greedy_decode(model, triple.src_ids, features=feats, max_len=max_len)
        subwords = tgt_vocab.decode(hyp.tokens)
        hyps.append(bpe_join(subwords))
        if model.config.multimodal:
            betas.extend(s.beta for s in hyp.steps)
    score = bleu4(hyps, val_refs)
    fractions = None
    if model.config.multimodal and betas:
        arr = np.array(betas)
        fractions = (float((arr > 0.5).mean()), float((arr > 0.8).mean()))
    return score, fractions


def train(model: NmtModel, train_triples, config: TrainConfig, *,
          val_triples=None, val_refs=None, features=None,
          opt: AdadeltaState | None = None, early: EarlyStopState | None = None,
          start_epoch: int = 0, log_path=None, checkpoint_path=None,
          src_vocab: Vocabulary | None = None, tgt_vocab: Vocabulary | None = None,
          bpe: BpeModel | None = None) -> TrainResult:
    """Run the recipe for up to max_epochs, resuming at start_epoch.

    Validation (val_triples + val_refs as word-token lines) drives early
    stopping; without it the loop runs all epochs. checkpoint_path, when
    given, receives the best model on every improvement (tgt_vocab is
    then required for decoding).
    """
    if not train_triples:
        raise ValueError("training corpus is empty")
    mc = model.config
    some = next(iter(model.params.tensors()))
    want_dtype = {"float32": np.float32, "float64": np.float64}[config.precision]
    if some.data.dtype != want_dtype:
        raise ValueError(f"parameters are {some.data.dtype} but config.precision is {config.precision}")
    if mc.multimodal:
        if features is None:
            raise ValueError("multimodal training needs a feature mapping")
        for t in train_triples:
            _feature_block(features, t)
    has_val = val_triples is not None and len(val_triples) > 0
    if has_val and tgt_vocab is None:
        raise ValueError("validation decoding needs tgt_vocab")
    opt = opt or AdadeltaState.for_params(model.params, rho=config.rho, eps=config.eps)
    early = early or EarlyStopState()
    batch_size = config.resolved_batch_size(mc.multimodal)
    history = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    stopped = False
    epoch = start_epoch
    try:
        with using_dtype(config.precision):
            for epoch in range(start_epoch, start_epoch + config.max_epochs):
                order = _shuffle(len(train_triples), config.seed, epoch)
                loss_sum = 0.0
                token_sum = 0
                for b0 in range(0, len(order), batch_size):
                    batch = [train_triples[i] for i in order[b0:b0 + batch_size]]
                    model.params.zero_grads()
                    batch_tokens = sum(len(t.tgt_ids) + 1 for t in batch)
                    for j, triple in enumerate(batch):
                        masks = make_dropout_masks(mc, config.dropout_p, config.seed,
                                                   epoch * len(train_triples) + b0 + j)
                        feats = _feature_block(features, triple) if mc.multimodal else None
                        try:
                            with Tape():
                                loss, n_tok = model.sentence_loss(
                                    triple.src_ids, triple.tgt_ids, features=feats, masks=masks)
                                backward(loss, adjoint=1.0 / batch_tokens)
                        except NonFiniteError as exc:
                            raise TrainingDiverged(
                                f"non-finite loss at epoch {epoch}, batch {b0 // batch_size}: {exc};"
                                f" largest parameters: {_param_norm_diagnostics(model.params)}"
                            ) from exc
                        loss_sum += float(loss.data)
                        token_sum += n_tok
                    clip_gradients(model.params, config.clip_norm)
                    adadelta_update(opt, model.params)
                record = EpochRecord(epoch=epoch, train_loss=loss_sum / max(token_sum, 1))
                if has_val and (epoch - start_epoch) % config.eval_every == 0:
                    score, fractions = validation_bleu(
                        model, val_triples, val_refs, tgt_vocab,
                        features=features, max_len=config.max_decode_len)
                    record.val_bleu = score
                    if fractions:
                        record.beta_gt_half, record.beta_gt_08 = fractions
                    improved = early.update(epoch, score)
                    if improved and checkpoint_path:
                        save_checkpoint(checkpoint_path, model, opt=opt, early=early,
                                        src_vocab=src_vocab, tgt_vocab=tgt_vocab, bpe=bpe,
                                        seed=config.seed, epochs_done=epoch + 1,
                                        precision=config.precision, history=history + [record])
                history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(asdict(record)) + "\n")
                    log_fh.flush()
                if has_val and early.should_stop(config.patience):
                    stopped = True
                    break
    finally:
        if log_fh:
            log_fh.close()
    epochs_done = epoch + 1 if (stopped or config.max_epochs > 0) else start_epoch
    if checkpoint_path and not has_val:
        save_checkpoint(checkpoint_path, model, opt=opt, early=early,
                        src_vocab=src_vocab, tgt_vocab=tgt_vocab, bpe=bpe,
                        seed=config.seed, epochs_done=epochs_done,
                        precision=config.precision, history=history)
    return TrainResult(history=history, opt=opt, early=early,
                       epochs_done=epochs_done, stopped_early=stopped)


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """A reloaded training snapshot."""

    model: NmtModel
    opt: AdadeltaState | None
    early: EarlyStopState
    src_vocab: Vocabulary | None
    tgt_vocab: Vocabulary | None
    bpe: BpeModel | None
    meta: dict

    @property
    def epochs_done(self):
        return self.meta["rng"]["epochs_done"]


def save_checkpoint(path, model: NmtModel, *, opt: AdadeltaState | None = None,
                    early: EarlyStopState | None = None,
                    src_vocab: Vocabulary | None = None,
                    tgt_vocab: Vocabulary | None = None,
                    bpe: BpeModel | None = None,
                    seed: int = 0, epochs_done: int = 0,
                    precision: str | None = None, history=None):
    """Write the documented npz container (see module docstring)."""
    early = early or EarlyStopState()
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "optimizer": {"rho": opt.rho if opt else ADADELTA_RHO,
                      "eps": opt.eps if opt else ADADELTA_EPS},
        "rng": {"seed": int(seed), "epochs_done": int(epochs_done)},
        "early_stop": {"best_bleu": early.best_bleu, "best_epoch": early.best_epoch,
                       "epochs_since_improvement": early.epochs_since_improvement},
        "precision": precision or str(next(iter(model.params.tensors())).data.dtype),
        "src_vocab": src_vocab.to_list() if src_vocab else None,
        "tgt_vocab": tgt_vocab.to_list() if tgt_vocab else None,
        "bpe": bpe.to_dict() if bpe else None,
        "history": [asdict(r) for r in history] if history else [],
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for name, t in model.params.items():
        arrays[f"param/{name}"] = t.data
    if opt:
        for name, a in opt.g2.items():
            arrays[f"opt/g2/{name}"] = a
        for name, a in opt.dx2.items():
            arrays[f"opt/dx2/{name}"] = a
    np.savez(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        config = ModelConfig.from_dict(meta["model_config"])
        tensors = {}
        for key in data.files:
            if key.startswith("param/"):
                a = data[key]
                tensors[key[len("param/"):]] = parameter(a, dtype=a.dtype)
        params = ModelParams(tensors)
        opt = None
        if any(k.startswith("opt/g2/") for k in data.files):
            opt = AdadeltaState(
                g2={k[len("opt/g2/"):]: data[k].copy() for k in data.files if k.startswith("opt/g2/")},
                dx2={k[len("opt/dx2/"):]: data[k].copy() for k in data.files if k.startswith("opt/dx2/")},
                rho=meta["optimizer"]["rho"], eps=meta["optimizer"]["eps"],
            )
    es = meta["early_stop"]
    early = EarlyStopState(best_bleu=es["best_bleu"], best_epoch=es["best_epoch"],
                           epochs_since_improvement=es["epochs_since_improvement"])
    return Checkpoint(
        model=NmtModel(config, params),
        opt=opt,
        early=early,
        src_vocab=Vocabulary.from_list(meta["src_vocab"]) if meta["src_vocab"] else None,
        tgt_vocab=Vocabulary.from_list(meta["tgt_vocab"]) if meta["tgt_vocab"] else None,
        bpe=BpeModel.from_dict(meta["bpe"]) if meta["bpe"] else None,
        meta=meta,
    )
