"""Graph convolution layers where the messages are score gradients.

Entity update:  h_v' = act_ent(m_v + W_0 h_v), where m_v sums
W * d f(h_u, h_r, h_v) / d h_v over in-edges and
W * d f(h_v, h_r, h_u) / d h_v over out-edges, scaled by
alpha / (|N_in(v)| + |N_out(v)|)  (zero for isolated entities).

Relation update:  h_r' = act_rel(W_rel (m_r + h_r)), where m_r sums
d f / d h_r over the edges labeled r, scaled by alpha / |N(r)|.

Updates are synchronous: every read comes from the input state.  The
default mode shares one W per layer and uses the same f on both
directions and for relations.  The reduction modes reproduce three
printed baselines exactly (their literal transcriptions live in
`baseline_forward` and serve as equivalence oracles):

    compgcn-sub/-mult/-corr  f = phi(h_u, h_r)^T h_v, f_r = 0,
                             relation update collapses to W_rel h_r
    rgcn                     f = h_u^T h_v, per-relation W_r, no
                             relation table
    wgcn                     f = h_u^T h_v, W_r = alpha_r * W, no
                             relation table, self term uses W itself

Matrices are stored row-convention: a row vector h maps to h @ W.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import numerics
from .autodiff import Tape, Variable
from .graph import (
    KnowledgeGraph,
    degree_norm,
    entity_norm_factors,
    relation_norm,
    relation_norm_factors,
)
from .numerics import RandomSource, truncated_normal_fill
from .scorers import Scorer, base_dim, make_scorer

MODES = ("kegcn", "compgcn-sub", "compgcn-mult", "compgcn-corr", "rgcn", "wgcn")
REDUCTION_MODES = ("compgcn-sub", "compgcn-mult", "compgcn-corr", "rgcn", "wgcn")

# Gradient-message init gains.  Inner-product scorers emit entity gradients
# of scale ~sigma (one embedding); distance scorers emit difference vectors
# of scale ~4 sigma, so the message transform of the inner-product family
# starts 4x larger to give both families comparable message magnitude.
# The self transform starts small so early updates are structure-driven.
MESSAGE_GAIN = {"transe": 1.0, "transh": 1.0, "transd": 1.0, "rotate": 1.0,
                "distmult": 4.0, "quate": 4.0}
SELF_GAIN = 0.1


@dataclass
class LayerParams:
    """One layer's weights plus its activation and normalization choices.

    Exactly one of (w, w_per_rel) carries the message transform; wgcn
    additionally scales each message by rel_scale[r] and reuses w for
    the self term (w0 is None there).
    """

    w: Optional[np.ndarray] = None
    w0: Optional[np.ndarray] = None
    w_rel: Optional[np.ndarray] = None
    w_per_rel: Optional[np.ndarray] = None
    rel_scale: Optional[np.ndarray] = None
    act_ent: str = "relu"
    act_rel: str = "relu"
    alpha: Optional[float] = None


@dataclass
class EmbeddingState:
    entity: np.ndarray
    relation: Optional[np.ndarray] = None


@dataclass
class ModelConfig:
    mode: str = "kegcn"
    scorer_kind: str = "transe"
    dim: int = 200
    layers: int = 4
    alpha: Optional[float] = 0.3
    out_dim: Optional[int] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.layers < 1:
            raise ValueError("layer count must be >= 1")
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.mode == "kegcn":
            base_dim(self.scorer_kind, self.dim)


def config_scorer(cfg: ModelConfig) -> Optional[Scorer]:
    """dim is the hidden (entity) width; the scorer gets its base d."""
    if cfg.mode != "kegcn":
        return None
    return make_scorer(cfg.scorer_kind, base_dim(cfg.scorer_kind, cfg.dim))


def entity_width(cfg: ModelConfig) -> int:
    s = config_scorer(cfg)
    return s.entity_width if s is not None else cfg.dim


def relation_width(cfg: ModelConfig) -> Optional[int]:
    if cfg.mode == "kegcn":
        return config_scorer(cfg).relation_width
    if cfg.mode.startswith("compgcn"):
        return cfg.dim
    return None


def init_params(cfg: ModelConfig, num_relations: int, rng: RandomSource) -> list[LayerParams]:
    we = entity_width(cfg)
    wr = relation_width(cfg)
    out: list[LayerParams] = []
    for layer in range(cfg.layers):
        last = layer == cfg.layers - 1
        out_w = cfg.out_dim if (last and cfg.out_dim is not None) else we
        act_ent = "identity" if last else "relu"
        act_rel = "identity" if (last or cfg.mode.startswith("compgcn")) else "relu"
        if cfg.mode == "rgcn":
            p = LayerParams(
                w_per_rel=truncated_normal_fill((num_relations, we, out_w), rng, width=we),
                w0=truncated_normal_fill((we, out_w), rng, width=we),
                act_ent=act_ent,
                act_rel=act_rel,
                alpha=cfg.alpha,
            )
        elif cfg.mode == "wgcn":
            p = LayerParams(
                w=truncated_normal_fill((we, out_w), rng, width=we),
                rel_scale=np.ones((num_relations, 1)),
                act_ent=act_ent,
                act_rel=act_rel,
                alpha=cfg.alpha,
            )
        else:
            w = truncated_normal_fill((we, out_w), rng, width=we)
            w0 = truncated_normal_fill((we, out_w), rng, width=we)
            w_rel = truncated_normal_fill((wr, wr), rng, width=wr)
            if cfg.mode == "kegcn":
                w *= MESSAGE_GAIN[cfg.scorer_kind]
                w0 *= SELF_GAIN
            p = LayerParams(
                w=w,
                w0=w0,
                w_rel=w_rel,
                act_ent=act_ent,
                act_rel=act_rel,
                alpha=cfg.alpha,
            )
        out.append(p)
    return out


def init_state(cfg: ModelConfig, graph: KnowledgeGraph, rng: RandomSource) -> EmbeddingState:
    ent = truncated_normal_fill((graph.num_entities, entity_width(cfg)), rng)
    wr = relation_width(cfg)
    rel = truncated_normal_fill((graph.num_relations, wr), rng) if wr else None
    return EmbeddingState(ent, rel)


# ---------------- eager per-entity oracle path ----------------


def _phi_eager(mode: str, h_neighbor: np.ndarray, h_rel: np.ndarray) -> np.ndarray:
    if mode == "compgcn-sub":
        return h_neighbor - h_rel
    if mode == "compgcn-mult":
        return h_neighbor * h_rel
    if mode == "compgcn-corr":
        return numerics.circular_correlation(h_neighbor, h_rel)
    raise ValueError(f"no composition for mode {mode!r}")


def _eager_edge_message(mode, scorer, state, u, r, v, position):
    """Message an entity receives from one incident edge (u, r, v);
    position says whether the receiver is the tail or the head."""
    ent, rel = state.entity, state.relation
    if mode == "kegcn":
        if position == "tail":
            return scorer.grad_tail(ent[u], rel[r], ent[v])
        return scorer.grad_head(ent[u], rel[r], ent[v])
    if mode.startswith("compgcn"):
        neighbor = ent[u] if position == "tail" else ent[v]
        return _phi_eager(mode, neighbor, rel[r])
    # rgcn / wgcn: the neighbor embedding itself
    return ent[u] if position == "tail" else ent[v]


def _apply_transform(g: np.ndarray, params: LayerParams, r: int) -> np.ndarray:
    if params.w_per_rel is not None:
        return g @ params.w_per_rel[r]
    if params.rel_scale is not None:
        return (params.rel_scale[r, 0] * g) @ params.w
    return g @ params.w


def entity_message(graph: KnowledgeGraph, state: EmbeddingState, scorer: Optional[Scorer],
                   v: int, params: LayerParams, mode: str = "kegcn") -> np.ndarray:
    """Transformed, degree-normalized message sum for one entity."""
    out_w = (params.w_per_rel if params.w is None else params.w).shape[-1]
    acc = np.zeros(out_w)
    for u, r in graph.in_adj[v]:
        g = _eager_edge_message(mode, scorer, state, u, r, v, "tail")
        acc += _apply_transform(g, params, r)
    for u, r in graph.out_adj[v]:
        g = _eager_edge_message(mode, scorer, state, v, r, u, "head")
        acc += _apply_transform(g, params, r)
    factor = 1.0 if params.alpha is None else degree_norm(graph, v, params.alpha)
    return factor * acc


def relation_message(graph: KnowledgeGraph, state: EmbeddingState, scorer: Optional[Scorer],
                     r: int, params: LayerParams, mode: str = "kegcn") -> np.ndarray:
    """Degree-normalized sum of d f / d h_r over the edges labeled r."""
    width = state.relation.shape[1]
    if mode != "kegcn":
        return np.zeros(width)
    acc = np.zeros(width)
    for u, v in graph.rel_index[r]:
        acc += scorer.grad_rel(state.entity[u], state.relation[r], state.entity[v])
    factor = 1.0 if params.alpha is None else relation_norm(graph, r, params.alpha)
    return factor * acc


def layer_forward(graph: KnowledgeGraph, state: EmbeddingState, params: LayerParams,
                  scorer: Optional[Scorer], mode: str = "kegcn") -> EmbeddingState:
    """Reference per-entity implementation of one synchronous layer."""
    w_self = params.w0 if params.w0 is not None else params.w
    new_ent = np.zeros((graph.num_entities, w_self.shape[1]))
    for v in range(graph.num_entities):
        m = entity_message(graph, state, scorer, v, params, mode)
        new_ent[v] = numerics.activation(params.act_ent, m + state.entity[v] @ w_self)
    new_rel = None
    if state.relation is not None and params.w_rel is not None:
        new_rel = np.zeros((graph.num_relations, params.w_rel.shape[1]))
        for r in range(graph.num_relations):
            if mode == "kegcn":
                mr = relation_message(graph, state, scorer, r, params, mode)
                pre = (mr + state.relation[r]) @ params.w_rel
            else:
                pre = state.relation[r] @ params.w_rel
            new_rel[r] = numerics.activation(params.act_rel, pre)
    return EmbeddingState(new_ent, new_rel)


# ---------------- batched tape path (production) ----------------


class LayerVars(NamedTuple):
    w: Optional[Variable]
    w0: Optional[Variable]
    w_rel: Optional[Variable]
    w_per_rel: Optional[Variable]
    rel_scale: Optional[Variable]


def lift_params(tape: Tape, p: LayerParams) -> LayerVars:
    lift = lambda a: None if a is None else tape.leaf(a)
    return LayerVars(lift(p.w), lift(p.w0), lift(p.w_rel), lift(p.w_per_rel), lift(p.rel_scale))


def _edge_messages_tape(tape, mode, scorer, U, Re, V):
    """(message-to-head, message-to-relation, message-to-tail) per edge."""
    if mode == "kegcn":
        return scorer.messages(tape, U, Re, V)
    if mode == "compgcn-sub":
        return tape.sub(V, Re), None, tape.sub(U, Re)
    if mode == "compgcn-mult":
        return tape.mul(V, Re), None, tape.mul(U, Re)
    if mode == "compgcn-corr":
        return tape.circular_correlation(V, Re), None, tape.circular_correlation(U, Re)
    return V, None, U


def layer_forward_tape(tape: Tape, graph: KnowledgeGraph, mode: str, scorer: Optional[Scorer],
                       params: LayerParams, lv: LayerVars,
                       hv: Variable, hr: Optional[Variable],
                       norm_cache: dict):
    n, rn, ne = graph.num_entities, graph.num_relations, graph.num_triples
    w_self = lv.w0 if lv.w0 is not None else lv.w
    self_term = tape.matmul(hv, w_self)
    gr_agg = None
    if ne > 0:
        U = tape.gather(hv, graph.heads)
        V = tape.gather(hv, graph.tails)
        Re = tape.gather(hr, graph.rels) if hr is not None else None
        gh, gr, gt = _edge_messages_tape(tape, mode, scorer, U, Re, V)
        if lv.w_per_rel is not None:
            gt = tape.per_relation_matmul(gt, lv.w_per_rel, graph.rels)
            gh = tape.per_relation_matmul(gh, lv.w_per_rel, graph.rels)
        elif lv.rel_scale is not None:
            scl = tape.gather(lv.rel_scale, graph.rels)
            gt = tape.mul(gt, scl)
            gh = tape.mul(gh, scl)
        m = tape.add(
            tape.segment_sum(gt, graph.tails, n), tape.segment_sum(gh, graph.heads, n)
        )
        if params.alpha is not None:
            key = ("ent", params.alpha)
            if key not in norm_cache:
                col = entity_norm_factors(graph, params.alpha).reshape(n, 1)
                norm_cache[key] = tape.leaf(col)
            m = tape.mul(m, norm_cache[key])
        if lv.w_per_rel is None:
            m = tape.matmul(m, lv.w)
        pre = tape.add(m, self_term)
        if gr is not None:
            gr_agg = tape.segment_sum(gr, graph.rels, rn)
    else:
        pre = self_term
    new_hv = tape.activate(params.act_ent, pre)

    new_hr = None
    if hr is not None and lv.w_rel is not None:
        if mode == "kegcn":
            if gr_agg is not None:
                if params.alpha is not None:
                    key = ("rel", params.alpha)
                    if key not in norm_cache:
                        col = relation_norm_factors(graph, params.alpha).reshape(rn, 1)
                        norm_cache[key] = tape.leaf(col)
                    gr_agg = tape.mul(gr_agg, norm_cache[key])
                pre_r = tape.matmul(tape.add(gr_agg, hr), lv.w_rel)
            else:
                pre_r = tape.matmul(hr, lv.w_rel)
        else:
            pre_r = tape.matmul(hr, lv.w_rel)
        new_hr = tape.activate(params.act_rel, pre_r)
    return new_hv, new_hr


def forward_on_tape(tape: Tape, graph: KnowledgeGraph, mode: str, scorer: Optional[Scorer],
                    params_list: list[LayerParams], layer_vars: list[LayerVars],
                    hv: Variable, hr: Optional[Variable], collect: bool = False):
    norm_cache: dict = {}
    states = []
    for p, lv in zip(params_list, layer_vars):
        hv, hr = layer_forward_tape(tape, graph, mode, scorer, p, lv, hv, hr, norm_cache)
        states.append((hv, hr))
    return states if collect else (hv, hr)


def model_forward(graph: KnowledgeGraph, state: EmbeddingState,
                  params_list: list[LayerParams], mode: str = "kegcn",
                  scorer: Optional[Scorer] = None, collect: bool = False):
    """Run the layer stack; returns the final EmbeddingState, or every
    layer's state when collect is set."""
    tape = Tape()
    hv = tape.leaf(state.entity)
    hr = tape.leaf(state.relation) if state.relation is not None else None
    lvs = [lift_params(tape, p) for p in params_list]
    out = forward_on_tape(tape, graph, mode, scorer, params_list, lvs, hv, hr, collect=collect)
    if collect:
        return [
            EmbeddingState(e.value, None if r is None else r.value) for e, r in out
        ]
    e, r = out
    return EmbeddingState(e.value, None if r is None else r.value)


# ---------------- printed baselines (equivalence oracles) ----------------


def baseline_forward(kind: str, graph: KnowledgeGraph, state: EmbeddingState,
                     params: LayerParams) -> EmbeddingState:
    """Literal transcription of one printed baseline layer; no
    normalization.  Used only as the oracle side of verify_reduction."""
    if kind not in REDUCTION_MODES:
        raise ValueError(f"no baseline for mode {kind!r}")
    ent, rel = state.entity, state.relation
    w_self = params.w if kind == "wgcn" else params.w0
    new_ent = np.zeros((graph.num_entities, w_self.shape[1]))
    for v in range(graph.num_entities):
        m = np.zeros(w_self.shape[1])
        for adj, pos in ((graph.in_adj[v], "in"), (graph.out_adj[v], "out")):
            for u, r in adj:
                if kind.startswith("compgcn"):
                    m = m + _phi_eager(kind, ent[u], rel[r]) @ params.w_per_rel[r]
                elif kind == "rgcn":
                    m = m + ent[u] @ params.w_per_rel[r]
                else:
                    m = m + (params.rel_scale[r, 0] * ent[u]) @ params.w
        new_ent[v] = numerics.activation(params.act_ent, m + ent[v] @ w_self)
    new_rel = None
    if kind.startswith("compgcn"):
        new_rel = rel @ params.w_rel
    return EmbeddingState(new_ent, new_rel)


def verify_reduction(mode: str, graph: KnowledgeGraph, seed: int,
                     layers: int = 3, dim: int = 8) -> float:
    """Max absolute discrepancy, over all layers, between the generic
    layer configured per the corresponding reduction and the literal
    baseline, on one random instance."""
    if mode not in REDUCTION_MODES:
        raise ValueError(f"verify_reduction expects a reduction mode, got {mode!r}")
    rng = RandomSource(seed)
    n, rn = graph.num_entities, graph.num_relations
    ent = truncated_normal_fill((n, dim), rng)
    rel = truncated_normal_fill((rn, dim), rng) if mode.startswith("compgcn") else None
    params = []
    for _ in range(layers):
        if mode.startswith("compgcn"):
            p = LayerParams(
                w_per_rel=truncated_normal_fill((rn, dim, dim), rng, width=dim),
                w0=truncated_normal_fill((dim, dim), rng, width=dim),
                w_rel=truncated_normal_fill((dim, dim), rng, width=dim),
                act_ent="relu",
                act_rel="identity",
            )
        elif mode == "rgcn":
            p = LayerParams(
                w_per_rel=truncated_normal_fill((rn, dim, dim), rng, width=dim),
                w0=truncated_normal_fill((dim, dim), rng, width=dim),
                act_ent="relu",
            )
        else:
            p = LayerParams(
                w=truncated_normal_fill((dim, dim), rng, width=dim),
                rel_scale=rng.normal((rn, 1)),
                act_ent="relu",
            )
        params.append(p)
    state = EmbeddingState(ent, rel)
    generic = model_forward(graph, state, params, mode=mode, collect=True)
    worst = 0.0
    base = state
    for layer_state, p in zip(generic, params):
        base = baseline_forward(mode, graph, base, p)
        worst = max(worst, float(np.max(np.abs(layer_state.entity - base.entity))))
        if base.relation is not None:
            worst = max(worst, float(np.max(np.abs(layer_state.relation - base.relation))))
    return worst
