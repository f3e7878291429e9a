"""Alignment attention over source annotations and spatial image features.

Both modalities use the same additive energy form, scored against the
decoder's proposal state, with separate weights per modality. The image
context is additionally scaled by a gate in (0, 1) computed from the
previous decoder state, letting the model decide per step how much of
the image to let in.
"""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import (
    Tensor,
    add,
    add_rowvec,
    matmul,
    matvec,
    scale,
    sigmoid,
    softmax_vec,
    tanh,
    vecmat,
)


@dataclass
class AttentionParams:
    """Additive attention weights for one modality.

    v: (d_att,) scoring vector, U: (d_dec, d_att) proposal projection,
    W: (d_ann, d_att) annotation projection, where d_ann is 2*d_h for
    source annotations and the feature dim D for image rows.
    """

    v: Tensor
    U: Tensor
    W: Tensor


@dataclass
class PrecomputedAnnotations:
    """Annotation rows with their W projection cached once per sentence.

    The projection does not depend on the decoder step, so callers
    compute it a single time and reuse it at every target position.
    """

    rows: Tensor       # (K, d_ann)
    projected: Tensor  # (K, d_att)


def precompute_annotations(p: AttentionParams, rows: Tensor) -> PrecomputedAnnotations:
    return PrecomputedAnnotations(rows=rows, projected=matmul(rows, p.W))


@dataclass
class AlignmentRow:
    """Normalized attention weights over one modality at one step."""

    weights: Tensor
    modality: str


def alignment_energies(p: AttentionParams, s_prop: Tensor, annotations) -> Tensor:
    """Unnormalized energies of the proposal state against K annotations.

    e_k = v . tanh(s' U + ann_k W); the s' U term is computed once and
    shared across k. ``annotations`` may be the raw (K, d_ann) rows or a
    PrecomputedAnnotations carrying the cached W projection.
    """
    pre = annotations if isinstance(annotations, PrecomputedAnnotations) \
        else precompute_annotations(p, annotations)
    query = vecmat(s_prop, p.U)
    return matvec(tanh(add_rowvec(pre.projected, query)), p.v)


def normalize_alignment(energies: Tensor, modality: str) -> AlignmentRow:
    """Softmax the energy vector into weights that sum to one."""
    return AlignmentRow(weights=softmax_vec(energies), modality=modality)


def source_context(alpha: AlignmentRow, annotations) -> Tensor:
    """Expected annotation under the source alignment: c_t = sum_k a_k h_k."""
    rows = annotations.rows if isinstance(annotations, PrecomputedAnnotations) else annotations
    return vecmat(alpha.weights, rows)


@dataclass
class GateParams:
    """Scalar gate on the image context, driven by the previous state."""

    W: Tensor  # (d_dec, 1)
    b: Tensor  # (1,)


def gate_beta(p: GateParams, s_prev: Tensor) -> Tensor:
    """beta_t = sigmoid(s_{t-1} W + b), a (1,) tensor strictly in (0, 1).

    Deliberately fed the previous committed state, not the proposal.
    """
    return sigmoid(add(vecmat(s_prev, p.W), p.b))


def image_context(beta: Tensor, alpha: AlignmentRow, features) -> Tensor:
    """Gated expected feature row: i_t = beta * sum_l a_l A_l."""
    rows = features.rows if isinstance(features, PrecomputedAnnotations) else features
    return scale(beta, vecmat(alpha.weights, rows))
