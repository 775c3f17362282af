"""Two-view quaternion GNN encoder and its ablation variants.

All views are laid out over a fixed node universe (entities first, then
relations) so node ids never need remapping between layers; nodes that are
not part of a view are isolated there and only see their own self-loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import graphs as gv
from .data import TripleStore

VARIANTS = ("two-view", "gcn", "ef-only", "rf-only", "levi", "rf-no-predicates")
ABLATIONS = ("gcn", "ef-only", "rf-only", "levi", "rf-no-predicates")
ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 1
    dim: int = 64
    variant: str = "two-view"
    activation: str = "tanh"

    def __post_init__(self):
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant {self.variant!r}; expected one of {VARIANTS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def uses_ef(self) -> bool:
        return self.variant in ("two-view", "gcn", "ef-only", "rf-no-predicates")

    @property
    def uses_rf(self) -> bool:
        return self.variant in ("two-view", "gcn", "rf-only", "rf-no-predicates")

    @property
    def quaternion_layers(self) -> bool:
        return self.variant != "gcn"


@dataclass
class EncoderGraphs:
    """Renormalized adjacencies the encoder consumes, already on the node universe."""

    n_entities: int
    n_relations: int
    adj_ef: sp.csr_matrix | None = None
    adj_rf: sp.csr_matrix | None = None
    rf_entity_mask: np.ndarray | None = None  # entities that are G_rf nodes
    adj_levi: sp.csr_matrix | None = None
    views: dict[str, gv.ViewGraph] = field(default_factory=dict)
    constraint_stats: dict = field(default_factory=dict)


def build_graphs(store: TripleStore, variant: str = "two-view", beta: float = 0.2) -> EncoderGraphs:
    """Build exactly the views ``variant`` needs from the training split."""
    cfg = EncoderConfig(variant=variant)
    n_e, n_r = store.vocab.n_entities, store.vocab.n_relations
    out = EncoderGraphs(n_e, n_r)
    train = store.train
    if cfg.uses_ef:
        ef = gv.build_entity_focused(train, n_e)
        out.views["ef"] = ef
        out.adj_ef = gv.renormalize(ef)
    if cfg.uses_rf:
        constraints, counts = gv.extract_rf_constraints(train)
        kept = gv.filter_constraints(constraints, beta, counts)
        kept_pairs = {(c.r_s, c.r_o) for c in kept}
        out.constraint_stats = {
            "beta": beta,
            "n_constraints": len(constraints),
            "n_pairs": len(counts),
            "n_kept_constraints": len(kept),
            "n_kept_pairs": len(kept_pairs),
        }
        rf = gv.build_relation_focused(kept, predicate_nodes=(variant != "rf-no-predicates"))
        out.views["rf"] = rf
        out.adj_rf, member = gv.universe_adjacency(rf, n_e, n_r)
        out.rf_entity_mask = member[:n_e]
    if variant == "levi":
        levi = gv.build_levi(train)
        out.views["levi"] = levi
        out.adj_levi, _ = gv.universe_adjacency(levi, n_e, n_r)
    return out


def init_params(config: EncoderConfig, n_entities: int, n_relations: int, rng: np.random.Generator) -> dict:
    """Glorot-initialized embedding tables and per-layer weights."""
    d = config.dim
    params = {
        "entity": ad.glorot_init((n_entities, d), rng, name="entity"),
        "relation": ad.glorot_init((n_relations, d), rng, name="relation"),
    }
    views = []
    if config.uses_ef:
        views.append("ef")
    if config.uses_rf:
        views.append("rf")
    if config.variant == "levi":
        views.append("levi")
    for view in views:
        for k in range(config.n_layers):
            name = f"W_{view}_{k}"
            if config.quaternion_layers:
                params[name] = ad.glorot_init((d, d), rng, name=name)
            else:
                params[name] = ad.glorot_init((4 * d, 4 * d), rng, name=name, quaternion=False)
    return params


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def qgnn_layer(adj, h: ad.Var, w: ad.Var, activation=ad.tanh) -> ad.Var:
    """Aggregate neighbours with ``adj``, apply ``w`` by Hamilton product, then the split activation."""
    return activation(ad.qmatmul(ad.spmm(adj, h), w))


def gcn_layer(adj, x: ad.Var, w: ad.Var, activation=ad.tanh) -> ad.Var:
    """Real-valued graph convolution on node features ``x`` of shape (N, n) with ``w`` (m, n)."""
    return activation(ad.linear(ad.spmm(adj, x), w))


def _gcn_on_quaternions(adj, h: ad.Var, w: ad.Var, activation) -> ad.Var:
    n = h.shape[1]
    flat = ad.reshape(ad.transpose(h, (1, 0, 2)), (n, -1))
    out = gcn_layer(adj, flat, w, activation)
    return ad.transpose(ad.reshape(out, (n, 4, -1)), (1, 0, 2))


def couple_entity(h_ef: ad.Var, h_rf: ad.Var | None, mask: np.ndarray | None = None) -> ad.Var:
    """Quaternion element-wise product of the two views' entity states.

    Entities outside the relation-focused view (``mask`` False, or ``h_rf`` absent)
    are multiplied by the all-ones stand-in, i.e. left unchanged.
    """
    if h_rf is None:
        return h_ef
    if mask is None:
        return ad.mul(h_ef, h_rf)
    m = mask.astype(np.float64)[None, :, None]
    stand_in = ad.add(ad.mul(h_rf, m), 1.0 - m)
    return ad.mul(h_ef, stand_in)


def assemble_rf_inputs(h_ef: ad.Var, h_rf_rel: ad.Var) -> ad.Var:
    """Relation-focused layer input: coupled entity states followed by relation states."""
    return ad.concat([h_ef, h_rf_rel], axis=1)


@dataclass
class LayerState:
    """Per-layer entity and relation representations used by the decoder, k = 0..K.

    ``ef_raw``/``rf_raw`` keep the uncoupled view outputs (None where a view is
    not part of the variant).
    """

    entity: list[ad.Var]
    relation: list[ad.Var]
    ef_raw: list[ad.Var | None]
    rf_raw: list[ad.Var | None]

    @property
    def n_layers(self) -> int:
        return len(self.entity) - 1


def encode(config: EncoderConfig, graphs: EncoderGraphs, params: dict, tape: ad.Tape,
           trainable: bool = True) -> LayerState:
    """Run the encoder for every layer and return the K+1 representation sets."""
    var = tape.param if trainable else (lambda p: tape.constant(p.value))
    act = ACTIVATIONS[config.activation]
    n_e, n_r = graphs.n_entities, graphs.n_relations
    ent0, rel0 = var(params["entity"]), var(params["relation"])

    def layer(adj, h, view, k):
        w = var(params[f"W_{view}_{k}"])
        if config.quaternion_layers:
            return qgnn_layer(adj, h, w, act)
        return _gcn_on_quaternions(adj, h, w, act)

    ent_idx, rel_idx = np.arange(n_e), np.arange(n_e, n_e + n_r)
    v = config.variant

    if v == "ef-only":
        ents, raw = [ent0], [ent0]
        h = ent0
        for k in range(config.n_layers):
            h = layer(graphs.adj_ef, h, "ef", k)
            ents.append(h)
            raw.append(h)
        return LayerState(ents, [rel0] * (config.n_layers + 1), raw, [None] * len(ents))

    if v in ("rf-only", "levi"):
        adj, view = (graphs.adj_rf, "rf") if v == "rf-only" else (graphs.adj_levi, "levi")
        ents, rels, raw = [ent0], [rel0], [None]
        x = assemble_rf_inputs(ent0, rel0)
        for k in range(config.n_layers):
            x = layer(adj, x, view, k)
            ents.append(ad.gather(x, ent_idx))
            rels.append(ad.gather(x, rel_idx))
            raw.append(x)
        return LayerState(ents, rels, [None] * len(ents), raw)

    # two-view, gcn, rf-no-predicates
    mask = graphs.rf_entity_mask
    h_ef = couple_entity(ent0, ent0, mask)
    h_rel = rel0
    ents, rels, ef_raw, rf_raw = [h_ef], [rel0], [ent0], [assemble_rf_inputs(ent0, rel0)]
    for k in range(config.n_layers):
        x_ef = layer(graphs.adj_ef, h_ef, "ef", k)
        x_rf = layer(graphs.adj_rf, assemble_rf_inputs(h_ef, h_rel), "rf", k)
        h_rel = ad.gather(x_rf, rel_idx)
        h_ef = couple_entity(x_ef, ad.gather(x_rf, ent_idx), mask)
        ents.append(h_ef)
        rels.append(h_rel)
        ef_raw.append(x_ef)
        rf_raw.append(x_rf)
    return LayerState(ents, rels, ef_raw, rf_raw)
