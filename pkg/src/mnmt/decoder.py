"""Conditional GRU decoder attending to source words and image features.

Each step runs five sub-operations: (1) a proposal GRU transition from
the previous state and previous target embedding, (2) source attention
queried by the proposal, (3) gated image attention queried by the same
proposal but gated by the previous state, (4) a second GRU transition
conditioned on both contexts, (5) a softmax output layer over the
target vocabulary. Text-only models simply omit the image pathway; with
all-zero features the two are numerically identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .attention import (
    AlignmentRow,
    AttentionParams,
    GateParams,
    PrecomputedAnnotations,
    alignment_energies,
    gate_beta,
    image_context,
    normalize_alignment,
    precompute_annotations,
    source_context,
)
from .encoder import AnnotationSet, GruCellParams, gru_step
from .tensor import (
    Tensor,
    add,
    affine3,
    gated_candidate,
    log_softmax_vec,
    mul,
    one_minus,
    sigmoid,
    softmax_vec,
    take_row,
    tanh,
    vecmat,
)

# Reserved vocabulary ids, fixed across the package.
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

Rec1Params = GruCellParams


def rec1_proposal(p: Rec1Params, s_prev: Tensor, y_prev_emb: Tensor) -> Tensor:
    """Proposal state s'_t from the previous state and previous embedding."""
    return gru_step(p, y_prev_emb, s_prev)


@dataclass
class Rec2Params:
    """Second GRU transition, conditioned on one or two contexts.

    Source context enters through W_src_*, image context through
    W_img_* (multimodal only), the proposal through U_*. No biases.
    """

    W_src_z: Tensor
    W_src_r: Tensor
    W_src: Tensor
    U_z: Tensor
    U_r: Tensor
    U: Tensor
    W_img_z: Tensor | None = None
    W_img_r: Tensor | None = None
    W_img: Tensor | None = None

    @property
    def multimodal(self):
        return self.W_img is not None


def rec2_step(p: Rec2Params, s_prop: Tensor, c_t: Tensor, i_t: Tensor | None = None) -> Tensor:
    """Final state s_t from the proposal and the attended context(s).

    z = sigmoid(c W_src_z + i W_img_z + s' U_z)
    r = sigmoid(c W_src_r + i W_img_r + s' U_r)
    cand = tanh(c W_src + i W_img + r * (s' U))
    s_t = (1 - z) * cand + z * s'
    """
    if p.multimodal and i_t is None:
        raise ValueError("multimodal Rec2Params requires an image context i_t")
    if not p.multimodal and i_t is not None:
        raise ValueError("text-only Rec2Params was given an image context")

    def mix(w_src, w_img, u):
        pre = affine3(c_t, w_src, s_prop, u)
        if i_t is not None:
            pre = add(pre, vecmat(i_t, w_img))
        return pre

    z = sigmoid(mix(p.W_src_z, p.W_img_z, p.U_z))
    r = sigmoid(mix(p.W_src_r, p.W_img_r, p.U_r))
    pre = gated_candidate(c_t, p.W_src, r, s_prop, p.U)
    if i_t is not None:
        pre = add(pre, vecmat(i_t, p.W_img))
    cand = tanh(pre)
    return add(mul(one_minus(z), cand), mul(z, s_prop))


@dataclass
class OutputParams:
    """Deep output layer: softmax(L_o tanh(L_s s + L_w emb + contexts)).

    Text-only models carry L_c for the source context; multimodal models
    carry L_cs (source) and L_ci (image). The tanh stack has no biases.
    """

    L_o: Tensor                # (d_proj, |V_y|)
    L_s: Tensor                # (d_dec, d_proj)
    L_w: Tensor                # (d_emb, d_proj)
    L_c: Tensor | None = None  # (2*d_h, d_proj), text-only
    L_cs: Tensor | None = None
    L_ci: Tensor | None = None

    @property
    def multimodal(self):
        return self.L_ci is not None


def _output_projection(p: OutputParams, s_t, y_prev_emb, c_t, i_t, proj_mask=None):
    if p.multimodal:
        if i_t is None:
            raise ValueError("multimodal OutputParams requires an image context i_t")
        pre = add(affine3(s_t, p.L_s, y_prev_emb, p.L_w),
                  affine3(c_t, p.L_cs, i_t, p.L_ci))
    else:
        if i_t is not None:
            raise ValueError("text-only OutputParams was given an image context")
        pre = add(affine3(s_t, p.L_s, y_prev_emb, p.L_w), vecmat(c_t, p.L_c))
    t = tanh(pre)
    if proj_mask is not None:
        t = mul(t, proj_mask)
    return vecmat(t, p.L_o)


def output_distribution(p: OutputParams, s_t, y_prev_emb, c_t, i_t=None, proj_mask=None) -> Tensor:
    """Probability vector over the target vocabulary."""
    return softmax_vec(_output_projection(p, s_t, y_prev_emb, c_t, i_t, proj_mask))


def output_log_probs(p: OutputParams, s_t, y_prev_emb, c_t, i_t=None, proj_mask=None) -> Tensor:
    """Log-probability vector; the stable form used by the training loss."""
    return log_softmax_vec(_output_projection(p, s_t, y_prev_emb, c_t, i_t, proj_mask))


@dataclass
class DecoderState:
    """Carryover between decode steps.

    prev_token is the id fed to the next step; decode_step returns the
    new state with prev_token = -1 and the caller fills in its choice.
    """

    s: Tensor
    prev_token: int
    step: int


@dataclass
class StepResult:
    """One decode step: distribution, next state, and introspection."""

    dist: np.ndarray
    log_dist: np.ndarray
    state: DecoderState
    alpha_src: np.ndarray
    alpha_img: np.ndarray | None
    beta: float | None


def decode_step(model, state: DecoderState, annotations, features=None) -> StepResult:
    """Run one target step of the model at inference time.

    ``annotations`` is an AnnotationSet or PrecomputedAnnotations for
    the source; ``features`` likewise for the image rows (multimodal
    models only). Returns numpy views for the distribution and
    alignment introspection; run it outside any Tape.
    """
    src_pre = _as_pre(model.att_src, annotations)
    y_emb = take_row(model.tgt_emb, state.prev_token)
    s_prop = rec1_proposal(model.rec1, state.s, y_emb)
    alpha_src = normalize_alignment(alignment_energies(model.att_src, s_prop, src_pre), "src")
    c_t = source_context(alpha_src, src_pre)

    alpha_img = beta = i_t = None
    if model.config.multimodal:
        if features is None:
            raise ValueError("multimodal model needs image features at decode time")
        img_pre = _as_pre(model.att_img, features)
        beta = gate_beta(model.gate, state.s)
        alpha_img = normalize_alignment(alignment_energies(model.att_img, s_prop, img_pre), "img")
        i_t = image_context(beta, alpha_img, img_pre)
    elif features is not None:
        raise ValueError("text-only model was given image features")

    s_t = rec2_step(model.rec2, s_prop, c_t, i_t)
    logits = _output_projection(model.out, s_t, y_emb, c_t, i_t)
    dist = softmax_vec(logits)
    log_dist = log_softmax_vec(logits)
    return StepResult(
        dist=dist.data,
        log_dist=log_dist.data,
        state=DecoderState(s=s_t, prev_token=-1, step=state.step + 1),
        alpha_src=alpha_src.weights.data,
        alpha_img=None if alpha_img is None else alpha_img.weights.data,
        beta=None if beta is None else beta.item(),
    )


def _as_pre(p: AttentionParams, annotations) -> PrecomputedAnnotations:
    if isinstance(annotations, PrecomputedAnnotations):
        return annotations
    if isinstance(annotations, AnnotationSet):
        return precompute_annotations(p, annotations.C)
    return precompute_annotations(p, annotations)


@dataclass
class Hypothesis:
    """Finished or live beam entry: emitted tokens and their total log-prob."""

    tokens: list
    logprob: float
    state: DecoderState | None = None
    steps: list | None = None  # StepResults when introspection is requested

    @property
    def score(self):
        # length-normalized by emitted token count (EOS included when emitted)
        return self.logprob / max(len(self.tokens), 1)


def beam_search(model, src_ids, features=None, beam=12, max_len=80,
                collect_steps=False):
    """Beam decode one sentence; returns the best Hypothesis.

    Hypotheses are ranked during search by cumulative log-probability
    and at the end by length-normalized score. beam=1 reproduces greedy
    argmax decoding exactly. Emitted tokens exclude BOS and the final
    EOS; the EOS log-prob still counts toward the score.
    """
    if beam < 1:
        raise ValueError(f"beam width must be >= 1, got {beam}")
    if len(src_ids) == 0:
        raise ValueError("cannot translate an empty source")
    annotations = model.encode(src_ids)
    src_pre = precompute_annotations(model.att_src, annotations.C)
    img_pre = None
    if model.config.multimodal:
        if features is None:
            raise ValueError("multimodal model needs image features")
        img_pre = precompute_annotations(model.att_img, model.as_feature_tensor(features))
    state0 = DecoderState(s=model.initial_state(annotations), prev_token=BOS_ID, step=0)
    live = [Hypothesis(tokens=[], logprob=0.0, state=state0, steps=[] if collect_steps else None)]
    done = []

    for _ in range(max_len):
        pool = []
        for hyp in live:
            result = decode_step(model, hyp.state, src_pre, img_pre)
            k = min(beam, result.log_dist.shape[0])
            # stable sort so exact ties resolve to the smallest token id,
            # matching argmax semantics at beam width 1
            top = np.argsort(-result.log_dist, kind="stable")[:k]
            for tok in top:
                pool.append((hyp.logprob + float(result.log_dist[tok]), int(tok), hyp, result))
        # deterministic order: best cumulative log-prob first, token id breaks ties
        pool.sort(key=lambda item: (-item[0], item[1]))
        live = []
        for logprob, tok, parent, result in pool[:beam]:
            steps = None if parent.steps is None else parent.steps + [result]
            if tok == EOS_ID:
                done.append(Hypothesis(tokens=list(parent.tokens) + [tok], logprob=logprob, steps=steps))
            else:
                live.append(Hypothesis(
                    tokens=list(parent.tokens) + [tok],
                    logprob=logprob,
                    state=replace(result.state, prev_token=tok),
                    steps=steps,
                ))
        if not live:
            break

    finished = done + live  # anything still live at max_len is force-finished
    best = max(finished, key=lambda h: (h.score, -len(h.tokens)))
    if best.tokens and best.tokens[-1] == EOS_ID:
        best = replace(best, tokens=best.tokens[:-1])
    return best


def greedy_decode(model, src_ids, features=None, max_len=80):
    """Greedy argmax decode with full per-step introspection."""
    return beam_search(model, src_ids, features=features, beam=1,
                       max_len=max_len, collect_steps=True)
