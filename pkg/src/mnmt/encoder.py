"""Bidirectional GRU encoder producing source annotation vectors.

Each source position gets an annotation that concatenates the forward
and backward GRU states at that position, so it summarizes the whole
sentence with emphasis on the words around it. The decoder's initial
state is a tanh affine map of the two final recurrent states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add,
    affine3,
    concat_vecs,
    constant,
    gated_candidate,
    mul,
    one_minus,
    sigmoid,
    stack_rows,
    take_row,
    tanh,
    vecmat,
)

MAX_SOURCE_LENGTH = 80


@dataclass
class GruCellParams:
    """Gated recurrent unit weights.

    W_* map the input (d_in, d_h), U_* the previous state (d_h, d_h),
    b_* are biases. The reset gate is applied inside the U_h product:
    candidate = tanh(x W_h + r * (h U_h) + b_h).
    """

    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def input_dim(self):
        return self.W_z.shape[0]

    @property
    def hidden_dim(self):
        return self.U_z.shape[0]


def gru_step(p: GruCellParams, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU transition.

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    cand = tanh(x W_h + r * (h U_h) + b_h)
    h' = (1 - z) * cand + z * h
    """
    z = sigmoid(affine3(x_t, p.W_z, h_prev, p.U_z, p.b_z))
    r = sigmoid(affine3(x_t, p.W_r, h_prev, p.U_r, p.b_r))
    cand = tanh(gated_candidate(x_t, p.W_h, r, h_prev, p.U_h, p.b_h))
    return add(mul(one_minus(z), cand), mul(z, h_prev))


@dataclass
class AnnotationSet:
    """Per-position source annotations plus the states that seed the decoder.

    C stacks [forward_i ; backward_i] per source position, shape
    (N, 2*d_h). final_forward is the forward state after the last token,
    final_backward the backward state after the first token.
    """

    C: Tensor
    source_length: int
    final_forward: Tensor
    final_backward: Tensor


def encode_bidirectional(src_ids, E_x: Tensor, fwd: GruCellParams, bwd: GruCellParams,
                         fwd_state_mask: Tensor | None = None,
                         bwd_state_mask: Tensor | None = None) -> AnnotationSet:
    """Run both directions over the source ids and stack annotations.

    Initial states are zero. Optional dropout masks multiply the
    recurrent state entering each step; one mask per direction, reused
    at every position of the sentence (training only).
    """
    n = len(src_ids)
    if n < 1:
        raise ValueError("cannot encode an empty source sentence")
    if n > MAX_SOURCE_LENGTH:
        raise ValueError(f"source has {n} tokens, above the corpus limit of {MAX_SOURCE_LENGTH}")
    vocab = E_x.shape[0]
    for i in src_ids:
        if not 0 <= int(i) < vocab:
            raise ValueError(f"token id {i} outside embedding table of {vocab} rows")
    d_h = fwd.hidden_dim
    embs = [take_row(E_x, int(i)) for i in src_ids]

    def run(cell, inputs, mask):
        h = constant(np.zeros(d_h))
        states = []
        for x in inputs:
            h_in = mul(h, mask) if mask is not None else h
            h = gru_step(cell, x, h_in)
            states.append(h)
        return states

    fwd_states = run(fwd, embs, fwd_state_mask)
    bwd_states_rev = run(bwd, list(reversed(embs)), bwd_state_mask)
    bwd_states = list(reversed(bwd_states_rev))
    rows = [concat_vecs([f, b]) for f, b in zip(fwd_states, bwd_states)]
    return AnnotationSet(
        C=stack_rows(rows),
        source_length=n,
        final_forward=fwd_states[-1],
        final_backward=bwd_states[0],
    )


@dataclass
class InitMlpParams:
    """tanh affine map from [final_forward ; final_backward] to s_0."""

    W: Tensor  # (2*d_h, d_dec)
    b: Tensor  # (d_dec,)


def init_decoder_state(annotations: AnnotationSet, p: InitMlpParams) -> Tensor:
    seed = concat_vecs([annotations.final_forward, annotations.final_backward])
    return tanh(add(vecmat(seed, p.W), p.b))
