"""Model assembly: configuration, parameter table, views, sentence loss.

Every trainable tensor has a stable dotted name in a flat table, which
is what the initializer, the optimizer, and the checkpoint format all
key on. Typed views over that table feed the encoder/attention/decoder
functions. The teacher-forced sentence loss composes exactly the same
five sub-operations as decode_step, so training and inference cannot
drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .attention import AttentionParams, GateParams, precompute_annotations
from .decoder import (
    BOS_ID,
    EOS_ID,
    OutputParams,
    Rec2Params,
    gate_beta,
    image_context,
    normalize_alignment,
    output_log_probs,
    rec1_proposal,
    rec2_step,
)
from .attention import alignment_energies, source_context
from .encoder import (
    AnnotationSet,
    GruCellParams,
    InitMlpParams,
    encode_bidirectional,
    init_decoder_state,
)
from .tensor import Tensor, add, constant, mul, mul_rowvec, neg, parameter, pick, take_row


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Defaults follow the full recipe."""

    src_vocab_size: int
    tgt_vocab_size: int
    emb_dim: int = 620
    enc_dim: int = 1024          # per direction
    dec_dim: int = 1024
    att_dim: int = 1024
    proj_dim: int = 620
    multimodal: bool = False
    feature_rows: int = 196      # spatial positions L
    feature_dim: int = 1024      # channels D

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "multimodal":
                continue
            if int(v) < 1:
                raise ValueError(f"{f.name} must be positive, got {v}")
            setattr(self, f.name, int(v))
        if self.src_vocab_size < 5 or self.tgt_vocab_size < 5:
            raise ValueError("vocabularies must cover the 4 reserved ids plus content")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ParamSpec:
    name: str
    shape: tuple
    init: str  # "gaussian" | "orthogonal" | "zero"


def _gru_specs(prefix, d_in, d_h):
    out = []
    for g in ("z", "r", "h"):
        out.append(ParamSpec(f"{prefix}.W_{g}", (d_in, d_h), "gaussian"))
    for g in ("z", "r", "h"):
        out.append(ParamSpec(f"{prefix}.U_{g}", (d_h, d_h), "orthogonal"))
    for g in ("z", "r", "h"):
        out.append(ParamSpec(f"{prefix}.b_{g}", (d_h,), "zero"))
    return out


def parameter_specs(config: ModelConfig):
    """Ordered list of every trainable tensor with shape and init kind."""
    c = config
    specs = [
        ParamSpec("src_emb", (c.src_vocab_size, c.emb_dim), "gaussian"),
        ParamSpec("tgt_emb", (c.tgt_vocab_size, c.emb_dim), "gaussian"),
    ]
    specs += _gru_specs("enc_fwd", c.emb_dim, c.enc_dim)
    specs += _gru_specs("enc_bwd", c.emb_dim, c.enc_dim)
    specs += [
        ParamSpec("init.W", (2 * c.enc_dim, c.dec_dim), "gaussian"),
        ParamSpec("init.b", (c.dec_dim,), "zero"),
    ]
    specs += _gru_specs("rec1", c.emb_dim, c.dec_dim)
    specs += [
        ParamSpec("rec2.W_src_z", (2 * c.enc_dim, c.dec_dim), "gaussian"),
        ParamSpec("rec2.W_src_r", (2 * c.enc_dim, c.dec_dim), "gaussian"),
        ParamSpec("rec2.W_src", (2 * c.enc_dim, c.dec_dim), "gaussian"),
        ParamSpec("rec2.U_z", (c.dec_dim, c.dec_dim), "orthogonal"),
        ParamSpec("rec2.U_r", (c.dec_dim, c.dec_dim), "orthogonal"),
        ParamSpec("rec2.U", (c.dec_dim, c.dec_dim), "orthogonal"),
        ParamSpec("att_src.v", (c.att_dim,), "gaussian"),
        ParamSpec("att_src.U", (c.dec_dim, c.att_dim), "gaussian"),
        ParamSpec("att_src.W", (2 * c.enc_dim, c.att_dim), "gaussian"),
        ParamSpec("out.L_s", (c.dec_dim, c.proj_dim), "gaussian"),
        ParamSpec("out.L_w", (c.emb_dim, c.proj_dim), "gaussian"),
        ParamSpec("out.L_o", (c.proj_dim, c.tgt_vocab_size), "gaussian"),
    ]
    if c.multimodal:
        specs += [
            ParamSpec("rec2.W_img_z", (c.feature_dim, c.dec_dim), "gaussian"),
            ParamSpec("rec2.W_img_r", (c.feature_dim, c.dec_dim), "gaussian"),
            ParamSpec("rec2.W_img", (c.feature_dim, c.dec_dim), "gaussian"),
            ParamSpec("att_img.v", (c.att_dim,), "gaussian"),
            ParamSpec("att_img.U", (c.dec_dim, c.att_dim), "gaussian"),
            ParamSpec("att_img.W", (c.feature_dim, c.att_dim), "gaussian"),
            ParamSpec("gate.W", (c.dec_dim, 1), "gaussian"),
            ParamSpec("gate.b", (1,), "zero"),
            ParamSpec("out.L_cs", (2 * c.enc_dim, c.proj_dim), "gaussian"),
            ParamSpec("out.L_ci", (c.feature_dim, c.proj_dim), "gaussian"),
        ]
    else:
        specs.append(ParamSpec("out.L_c", (2 * c.enc_dim, c.proj_dim), "gaussian"))
    return specs


_COMPONENT_PREFIXES = (
    ("embeddings", ("src_emb", "tgt_emb")),
    ("encoder", ("enc_fwd.", "enc_bwd.", "init.")),
    ("decoder", ("rec1.", "rec2.")),
    ("attention", ("att_src.", "att_img.", "gate.")),
    ("output", ("out.",)),
)


def param_count(config: ModelConfig):
    """Per-component and total trainable parameter counts (shape arithmetic)."""
    counts = {name: 0 for name, _ in _COMPONENT_PREFIXES}
    for spec in parameter_specs(config):
        n = int(np.prod(spec.shape))
        for comp, prefixes in _COMPONENT_PREFIXES:
            if any(spec.name == p or spec.name.startswith(p) for p in prefixes):
                counts[comp] += n
                break
        else:
            raise AssertionError(f"parameter {spec.name} not assigned to a component")
    counts["total"] = sum(counts.values())
    return counts


class ModelParams:
    """Flat name -> Tensor table of all trainable parameters."""

    def __init__(self, tensors):
        self._tensors = dict(tensors)

    def __getitem__(self, name) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self):
        return self._tensors.values()

    def zero_grads(self):
        for t in self._tensors.values():
            t.zero_grad()

    def as_dict(self):
        return dict(self._tensors)

    @classmethod
    def from_arrays(cls, arrays):
        return cls({name: parameter(a) for name, a in arrays.items()})


def _gru_view(params, prefix):
    return GruCellParams(**{f: params[f"{prefix}.{f}"]
                            for f in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")})


@dataclass
class DropoutMasks:
    """Per-sentence dropout masks, one per site, tied across time steps."""

    enc_fwd: Optional[Tensor] = None
    enc_bwd: Optional[Tensor] = None
    dec: Optional[Tensor] = None
    img: Optional[Tensor] = None
    out: Optional[Tensor] = None


class NmtModel:
    """Config + parameter table + typed views + forward passes."""

    def __init__(self, config: ModelConfig, params: ModelParams):
        missing = []
        for spec in parameter_specs(config):
            if spec.name not in params:
                missing.append(spec.name)
            elif params[spec.name].shape != spec.shape:
                raise ValueError(f"parameter {spec.name} has shape {params[spec.name].shape},"
                                 f" expected {spec.shape} for this configuration")
        if missing:
            raise ValueError(f"parameter table is missing {missing[:3]} (+{max(0, len(missing) - 3)} more)")
        self.config = config
        self.params = params
        self.src_emb = params["src_emb"]
        self.tgt_emb = params["tgt_emb"]
        self.enc_fwd = _gru_view(params, "enc_fwd")
        self.enc_bwd = _gru_view(params, "enc_bwd")
        self.init_mlp = InitMlpParams(W=params["init.W"], b=params["init.b"])
        self.rec1 = _gru_view(params, "rec1")
        if config.multimodal:
            self.rec2 = Rec2Params(
                W_src_z=params["rec2.W_src_z"], W_src_r=params["rec2.W_src_r"], W_src=params["rec2.W_src"],
                U_z=params["rec2.U_z"], U_r=params["rec2.U_r"], U=params["rec2.U"],
                W_img_z=params["rec2.W_img_z"], W_img_r=params["rec2.W_img_r"], W_img=params["rec2.W_img"],
            )
            self.att_img = AttentionParams(v=params["att_img.v"], U=params["att_img.U"], W=params["att_img.W"])
            self.gate = GateParams(W=params["gate.W"], b=params["gate.b"])
            self.out = OutputParams(L_o=params["out.L_o"], L_s=params["out.L_s"], L_w=params["out.L_w"],
                                    L_cs=params["out.L_cs"], L_ci=params["out.L_ci"])
        else:
            self.rec2 = Rec2Params(
                W_src_z=params["rec2.W_src_z"], W_src_r=params["rec2.W_src_r"], W_src=params["rec2.W_src"],
                U_z=params["rec2.U_z"], U_r=params["rec2.U_r"], U=params["rec2.U"],
            )
            self.att_img = None
            self.gate = None
            self.out = OutputParams(L_o=params["out.L_o"], L_s=params["out.L_s"], L_w=params["out.L_w"],
                                    L_c=params["out.L_c"])
        self.att_src = AttentionParams(v=params["att_src.v"], U=params["att_src.U"], W=params["att_src.W"])

    # ----- forward passes -------------------------------------------------

    def encode(self, src_ids, masks: DropoutMasks | None = None) -> AnnotationSet:
        m = masks or DropoutMasks()
        return encode_bidirectional(src_ids, self.src_emb, self.enc_fwd, self.enc_bwd,
                                    fwd_state_mask=m.enc_fwd, bwd_state_mask=m.enc_bwd)

    def initial_state(self, annotations: AnnotationSet) -> Tensor:
        return init_decoder_state(annotations, self.init_mlp)

    def as_feature_tensor(self, features) -> Tensor:
        """Validate an (L, D) feature array against the config and wrap it."""
        if isinstance(features, Tensor):
            arr = features.data
            out = features
        else:
            arr = np.asarray(features)
            out = None
        want = (self.config.feature_rows, self.config.feature_dim)
        if arr.shape != want:
            raise ValueError(f"feature block has shape {arr.shape}, model expects {want}")
        return out if out is not None else constant(arr)

    def sentence_loss(self, src_ids, tgt_ids, features=None, masks: DropoutMasks | None = None):
        """Teacher-forced negative log-likelihood, summed over target tokens.

        Returns (loss Tensor, token count); the count includes the
        closing EOS. Run inside a Tape to collect gradients.
        """
        c = self.config
        if c.multimodal and features is None:
            raise ValueError("multimodal model needs image features for the loss")
        if not c.multimodal and features is not None:
            raise ValueError("text-only model was given image features")
        for i in tgt_ids:
            if not 0 <= int(i) < c.tgt_vocab_size:
                raise ValueError(f"target id {i} outside vocabulary of {c.tgt_vocab_size}")
        m = masks or DropoutMasks()
        annotations = self.encode(src_ids, masks)
        src_pre = precompute_annotations(self.att_src, annotations.C)
        img_pre = None
        if c.multimodal:
            feat = self.as_feature_tensor(features)
            if m.img is not None:
                feat = mul_rowvec(feat, m.img)
            img_pre = precompute_annotations(self.att_img, feat)
        s = self.initial_state(annotations)
        inputs = [BOS_ID] + [int(i) for i in tgt_ids]
        targets = [int(i) for i in tgt_ids] + [EOS_ID]
        total = None
        for prev, target in zip(inputs, targets):
            y_emb = take_row(self.tgt_emb, prev)
            s_in = mul(s, m.dec) if m.dec is not None else s
            s_prop = rec1_proposal(self.rec1, s_in, y_emb)
            alpha_src = normalize_alignment(alignment_energies(self.att_src, s_prop, src_pre), "src")
            c_t = source_context(alpha_src, src_pre)
            i_t = None
            if c.multimodal:
                beta = gate_beta(self.gate, s_in)
                alpha_img = normalize_alignment(alignment_energies(self.att_img, s_prop, img_pre), "img")
                i_t = image_context(beta, alpha_img, img_pre)
            s = rec2_step(self.rec2, s_prop, c_t, i_t)
            logp = output_log_probs(self.out, s, y_emb, c_t, i_t, proj_mask=m.out)
            nll = neg(pick(logp, target))
            total = nll if total is None else add(total, nll)
        return total, len(targets)
