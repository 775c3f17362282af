"""Layer-weighted QuatE decoder, the weighted cross-entropy loss, and checkpoints."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import quaternion as qa
from .encoder import EncoderConfig, EncoderGraphs, LayerState, encode, init_params


class ScoreWeights:
    """Mixture weights alpha_0..alpha_K over encoder layers."""

    def __init__(self, alphas):
        alphas = [float(a) for a in alphas]
        if not alphas:
            raise ValueError("need at least one layer weight")
        if any(a < 0.0 or a > 1.0 for a in alphas):
            raise ValueError(f"layer weights must lie in [0, 1], got {alphas}")
        if abs(sum(alphas) - 1.0) > 1e-12:
            raise ValueError(f"layer weights must sum to 1, got {sum(alphas)!r}")
        self.alphas = tuple(alphas)

    @classmethod
    def from_alpha0(cls, alpha0: float, n_layers: int) -> "ScoreWeights":
        """``alpha_0`` for the embedding layer, ``(1 - alpha_0) / K`` for each of the K layers.

        With no message-passing layers the single weight is 1 whatever ``alpha0`` says.
        """
        if not 0.0 <= alpha0 <= 1.0:
            raise ValueError(f"alpha0 must lie in [0, 1], got {alpha0}")
        if n_layers == 0:
            return cls([1.0])
        rest = (1.0 - alpha0) / n_layers
        return cls([alpha0] + [rest] * n_layers)

    def __len__(self) -> int:
        return len(self.alphas)

    def __iter__(self):
        return iter(self.alphas)

    def __repr__(self) -> str:
        return f"ScoreWeights({list(self.alphas)})"


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def score_layer(h: ad.Var, r: ad.Var, t: ad.Var) -> ad.Var:
    """``(h (x) r_unit) . t`` for batches of quaternion rows of shape (4, B, d)."""
    return ad.qinner(ad.hamilton(h, ad.qnormalize(r)), t)


def layer_scores(state: LayerState, triples: np.ndarray) -> list[ad.Var]:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    out = []
    for ent, rel in zip(state.entity, state.relation):
        out.append(score_layer(ad.gather(ent, h), ad.gather(rel, r), ad.gather(ent, t)))
    return out


def score(state: LayerState, triples: np.ndarray, weights: ScoreWeights) -> ad.Var:
    per_layer = layer_scores(state, triples)
    if len(per_layer) != len(weights):
        raise ValueError(f"{len(weights)} layer weights for {len(per_layer)} encoder layers")
    total = ad.scale(per_layer[0], weights.alphas[0])
    for a, f in zip(weights.alphas[1:], per_layer[1:]):
        total = total + ad.scale(f, a)
    return total


def weighted_loss(per_layer: list[ad.Var], labels: np.ndarray, weights: ScoreWeights) -> ad.Var:
    """Negative log-likelihood of the labels under ``sigmoid(f_k)``, summed over triples, weighted over layers."""
    labels = np.asarray(labels, dtype=np.float64)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    if len(per_layer) != len(weights):
        raise ValueError(f"{len(weights)} layer weights for {len(per_layer)} encoder layers")
    total = None
    for a, f in zip(weights.alphas, per_layer):
        if not np.all(np.isfinite(f.value)):
            raise FloatingPointError("non-finite triple score")
        ll = ad.mul(ad.log_sigmoid(f), labels) + ad.mul(ad.log_sigmoid(ad.neg(f)), 1.0 - labels)
        term = ad.scale(ad.sum(ll), -a)
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# model wrapper
# ---------------------------------------------------------------------------

class WGEModel:
    """Encoder parameters plus decoder weights bound to a fixed set of graphs."""

    def __init__(self, config: EncoderConfig, graphs: EncoderGraphs, weights: ScoreWeights,
                 params: dict | None = None, rng: np.random.Generator | None = None):
        if len(weights) != config.n_layers + 1:
            raise ValueError(f"{len(weights)} layer weights for K={config.n_layers}")
        self.config = config
        self.graphs = graphs
        self.weights = weights
        if params is None:
            params = init_params(config, graphs.n_entities, graphs.n_relations,
                                 rng if rng is not None else np.random.default_rng(0))
        self.params = params

    def parameters(self) -> list[ad.Param]:
        return list(self.params.values())

    def forward(self, tape: ad.Tape, trainable: bool = True) -> LayerState:
        return encode(self.config, self.graphs, self.params, tape, trainable=trainable)

    def loss(self, tape: ad.Tape, triples: np.ndarray, labels: np.ndarray) -> ad.Var:
        state = self.forward(tape)
        return weighted_loss(layer_scores(state, triples), labels, self.weights)

    def representations(self) -> "Representations":
        """Frozen numpy snapshot of every layer's entity table and unit relation table."""
        tape = ad.Tape()
        state = self.forward(tape, trainable=False)
        ents = [e.value.copy() for e in state.entity]
        rels = [qa.normalize_array(r.value) for r in state.relation]
        return Representations(ents, rels, self.weights.alphas)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self.params):
            raise ValueError("snapshot parameter names do not match the model")
        for name, val in values.items():
            if val.shape != self.params[name].value.shape:
                raise ValueError(f"shape mismatch for {name}: {val.shape} vs {self.params[name].value.shape}")
            self.params[name].value[...] = val


@dataclass
class Representations:
    entity: list[np.ndarray]    # per layer, (4, |E|, d)
    relation: list[np.ndarray]  # per layer, (4, |R|, d), unit quaternions
    alphas: tuple

    def score_triples(self, triples: np.ndarray) -> np.ndarray:
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        total = np.zeros(len(triples))
        for a, ent, rel in zip(self.alphas, self.entity, self.relation):
            hr = qa.hamilton_array(ent[:, triples[:, 0]], rel[:, triples[:, 1]])
            total += a * qa.inner_array(hr, ent[:, triples[:, 2]])
        return total

    def _entity_matrix(self) -> np.ndarray:
        # (|E|, (K+1)*4*d)
        return np.concatenate([e.transpose(1, 0, 2).reshape(e.shape[1], -1) for e in self.entity], axis=1)

    def tail_scores(self, heads: np.ndarray, rels: np.ndarray) -> np.ndarray:
        """Scores of ``(h, r, e)`` for every entity e; shape (B, |E|)."""
        qs = []
        for a, ent, rel in zip(self.alphas, self.entity, self.relation):
            q = qa.hamilton_array(ent[:, heads], rel[:, rels])
            qs.append(a * q.transpose(1, 0, 2).reshape(len(heads), -1))
        return np.concatenate(qs, axis=1) @ self._entity_matrix().T

    def head_scores(self, rels: np.ndarray, tails: np.ndarray) -> np.ndarray:
        """Scores of ``(e, r, t)`` for every entity e; shape (B, |E|).

        Uses ``(x (x) r) . t == x . (t (x) conj(r))``.
        """
        qs = []
        for a, ent, rel in zip(self.alphas, self.entity, self.relation):
            q = qa.hamilton_array(ent[:, tails], qa.conjugate_array(rel[:, rels]))
            qs.append(a * q.transpose(1, 0, 2).reshape(len(tails), -1))
        return np.concatenate(qs, axis=1) @ self._entity_matrix().T


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"WGECKPT\0"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class VocabMismatchError(CheckpointError):
    pass


def _pack(params: dict[str, np.ndarray], meta: dict) -> bytes:
    index, chunks, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True).encode("utf-8")
    return struct.pack("<Q", len(header)) + header + b"".join(chunks)


def _unpack(payload: bytes) -> tuple[dict[str, np.ndarray], dict]:
    (hlen,) = struct.unpack("<Q", payload[:8])
    header = json.loads(payload[8:8 + hlen].decode("utf-8"))
    body = payload[8 + hlen:]
    params = {}
    for entry in header["arrays"]:
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    return params, header["meta"]


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], meta: dict) -> None:
    """Write ``MAGIC | version | sha256(payload) | len | payload``.

    The payload is a length-prefixed JSON header (metadata plus an array index)
    followed by the raw little-endian float64 arrays, so identical inputs give
    identical bytes.
    """
    payload = _pack(params, meta)
    header = MAGIC + struct.pack("<I", FORMAT_VERSION) + hashlib.sha256(payload).digest() + struct.pack("<Q", len(payload))
    Path(path).write_bytes(header + payload)


def load_checkpoint(path: str | Path, vocab_digest: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    head = len(MAGIC) + 4 + 32 + 8
    if len(blob) < head or not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", blob[len(MAGIC):len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = blob[len(MAGIC) + 4:len(MAGIC) + 36]
    (size,) = struct.unpack("<Q", blob[len(MAGIC) + 36:head])
    payload = blob[head:]
    if len(payload) != size or hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: integrity check failed (file is truncated or corrupted)")
    params, meta = _unpack(payload)
    if vocab_digest is not None and meta.get("vocab_digest") != vocab_digest:
        raise VocabMismatchError(f"{path}: checkpoint vocabulary does not match the dataset")
    return params, meta


def encoder_config_dict(config: EncoderConfig) -> dict:
    return asdict(config)
