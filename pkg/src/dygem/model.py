"""Sequence embedding network.

A time-aware LSTM turns each walk into per-slot states whose short-term
memory is attenuated by the incoming edge timespan. A masked multi-head
encoder and a decoder (queries taken from the one-slot-shifted states) yield
per-vertex edge-formation embeddings; an unmasked attention stack over
whole-sequence sums yields structure embeddings; a fusion head combines the
two into the final per-vertex representation.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GraphFormatError

CHECKPOINT_MAGIC = b"DGCK"
CHECKPOINT_VERSION = 1

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    n_vertices: int
    k: int = 128
    heads: int = 8
    blocks: int = 6
    max_len: int = 5
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.k, self.heads, self.blocks, self.max_len) < 1:
            raise ValueError("k, heads, blocks, max_len must all be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def slots(self) -> int:
        """Padded sequence length (walk slots plus the trailing EOS slot)."""
        return self.max_len + 1

    @property
    def eos_id(self) -> int:
        return self.n_vertices

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def causal_mask(n: int) -> np.ndarray:
    """Additive mask: 0 at or below the diagonal, -inf strictly above."""
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -np.inf
    return m


def time_lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, decay_div: np.ndarray,
                   p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """One recurrent step.

    The previous memory is split into a learned short-term part and its
    long-term remainder; the short-term part is divided by log(e + timespan)
    (``decay_div``, precomputed) so staler context contributes less, then the
    usual gate arithmetic runs on the re-assembled memory.
    """
    c_short = ad.tanh(c_prev @ p["tlstm.Wd"] + p["tlstm.bd"])
    c_long = c_prev - c_short
    c_adj = c_long + c_short * (1.0 / decay_div)
    f = ad.sigmoid(x @ p["tlstm.Wf"] + h_prev @ p["tlstm.Uf"] + p["tlstm.bf"])
    g = ad.sigmoid(x @ p["tlstm.Wg"] + h_prev @ p["tlstm.Ug"] + p["tlstm.bg"])
    o = ad.sigmoid(x @ p["tlstm.Wo"] + h_prev @ p["tlstm.Uo"] + p["tlstm.bo"])
    c_bar = ad.sigmoid(x @ p["tlstm.Wc"] + h_prev @ p["tlstm.Uc"] + p["tlstm.bc"])
    c = f * c_adj + g * c_bar
    h = o * ad.tanh(c)
    return h, c


class EmbeddingModel:
    """Holds all trainable tensors plus the per-vertex representation table.

    ``params`` maps dotted names to tensors so every coordinate is addressable
    for gradient checking. ``r_table`` (one row per vertex plus a reserved EOS
    row) is plain state: rows are overwritten with fused outputs during
    training, never moved by the optimizer.
    """

    def __init__(self, cfg: ModelConfig, r_init: np.ndarray | None = None):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xE)))
        if r_init is None:
            r_init = rng.normal(0.0, 1.0 / math.sqrt(cfg.k), (cfg.n_vertices + 1, cfg.k))
        if r_init.shape != (cfg.n_vertices + 1, cfg.k):
            raise ValueError(f"representation table must be {(cfg.n_vertices + 1, cfg.k)}, "
                             f"got {r_init.shape}")
        self.r_table = np.asarray(r_init, dtype=np.float64).copy()
        self.params: dict[str, Tensor] = {}
        self._build_params(rng, r_init)
        self.mask = causal_mask(cfg.slots)

    # -- parameters ------------------------------------------------------
    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True)

    def _mat(self, rng, fan_in: int, shape) -> np.ndarray:
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape)

    def _attn_block(self, rng, prefix: str, q_dim: int) -> None:
        k, heads = self.cfg.k, self.cfg.heads
        wide = heads * k
        for o in range(heads):
            self._add(f"{prefix}.h{o}.Wq", self._mat(rng, q_dim, (q_dim, k)))
            self._add(f"{prefix}.h{o}.Wk", self._mat(rng, k, (k, k)))
            self._add(f"{prefix}.h{o}.Wv", self._mat(rng, k, (k, k)))
        self._add(f"{prefix}.ln1.scale", np.ones(wide))
        self._add(f"{prefix}.ln1.bias", np.zeros(wide))

    def _ffn_block(self, rng, prefix: str) -> None:
        k, wide = self.cfg.k, self.cfg.heads * self.cfg.k
        self._add(f"{prefix}.ffn.W1", self._mat(rng, wide, (wide, wide)))
        self._add(f"{prefix}.ffn.b1", np.zeros(wide))
        self._add(f"{prefix}.ffn.W2", self._mat(rng, wide, (wide, k)))
        self._add(f"{prefix}.ffn.b2", np.zeros(k))
        self._add(f"{prefix}.ln2.scale", np.ones(k))
        self._add(f"{prefix}.ln2.bias", np.zeros(k))

    def _build_params(self, rng, r_init: np.ndarray) -> None:
        cfg = self.cfg
        k = cfg.k
        for gate in ("d", "f", "g", "o", "c"):
            self._add(f"tlstm.W{gate}", self._mat(rng, k, (k, k)))
            if gate != "d":
                self._add(f"tlstm.U{gate}", self._mat(rng, k, (k, k)))
            self._add(f"tlstm.b{gate}", np.zeros(k))
        for n in range(cfg.blocks):
            self._attn_block(rng, f"enc{n}", k)
            self._ffn_block(rng, f"enc{n}")
        for n in range(cfg.blocks):
            self._attn_block(rng, f"dec{n}.self", k)
            self._attn_block(rng, f"dec{n}.cross", cfg.heads * k)
            self._ffn_block(rng, f"dec{n}")
        for n in range(cfg.blocks):
            self._attn_block(rng, f"strc{n}", k)
            self._ffn_block(rng, f"strc{n}")
        self._add("fuse.W1", self._mat(rng, k, (k, k)))
        self._add("fuse.b1", np.zeros(k))
        self._add("fuse.W2", self._mat(rng, k, (k, k)))
        self._add("fuse.b2", np.zeros(k))
        self._add("fuse.ln.scale", np.ones(k))
        self._add("fuse.ln.bias", np.zeros(k))
        self._add("w_s", self._mat(rng, k, (k, 1)))
        self._add("w_toe", self._mat(rng, k, (k, 1)))
        self._add("x_table", np.asarray(r_init, dtype=np.float64).copy())

    def param_values(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self.params.items()}

    def set_param_values(self, values: dict[str, np.ndarray]) -> None:
        for name, v in values.items():
            self.params[name].value = np.asarray(v, dtype=np.float64).copy()

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    # -- forward pieces ----------------------------------------------------
    def run_time_lstm(self, vids: np.ndarray, decay_div: np.ndarray) -> Tensor:
        """States for every slot of a batch; vids and decay_div are (B, S)."""
        b, s = vids.shape
        k = self.cfg.k
        x = ad.gather_rows(self.params["x_table"], vids)
        h = Tensor(np.zeros((b, k)))
        c = Tensor(np.zeros((b, k)))
        states = []
        for i in range(s):
            h, c = time_lstm_step(x[:, i, :], h, c, decay_div[:, i:i + 1], self.params)
            states.append(h.reshape((b, 1, k)))
        return ad.concat(states, axis=1)

    def _self_attention(self, x: Tensor, prefix: str, mask) -> Tensor:
        """Masked multi-head attention, head concat, residual add of the
        concatenated queries, layer norm; output is heads*k wide."""
        scale = 1.0 / math.sqrt(self.cfg.k)
        zs, qs = [], []
        for o in range(self.cfg.heads):
            q = x @ self.params[f"{prefix}.h{o}.Wq"]
            key = x @ self.params[f"{prefix}.h{o}.Wk"]
            v = x @ self.params[f"{prefix}.h{o}.Wv"]
            probs = ad.masked_softmax((q @ key.swap_last()) * scale, mask)
            zs.append(probs @ v)
            qs.append(q)
        return ad.layer_norm(ad.concat(zs, -1) + ad.concat(qs, -1),
                             self.params[f"{prefix}.ln1.scale"],
                             self.params[f"{prefix}.ln1.bias"], LN_EPS)

    def _cross_attention(self, queries_wide: Tensor, memory: Tensor, prefix: str,
                         mask) -> Tensor:
        scale = 1.0 / math.sqrt(self.cfg.k)
        zs, qs = [], []
        for o in range(self.cfg.heads):
            q = queries_wide @ self.params[f"{prefix}.h{o}.Wq"]
            key = memory @ self.params[f"{prefix}.h{o}.Wk"]
            v = memory @ self.params[f"{prefix}.h{o}.Wv"]
            probs = ad.masked_softmax((q @ key.swap_last()) * scale, mask)
            zs.append(probs @ v)
            qs.append(q)
        return ad.layer_norm(ad.concat(zs, -1) + ad.concat(qs, -1),
                             self.params[f"{prefix}.ln1.scale"],
                             self.params[f"{prefix}.ln1.bias"], LN_EPS)

    def _ffn(self, z: Tensor, prefix: str, training: bool, rng) -> Tensor:
        inner = ad.relu(z @ self.params[f"{prefix}.ffn.W1"] + self.params[f"{prefix}.ffn.b1"] + z)
        out = ad.layer_norm(inner @ self.params[f"{prefix}.ffn.W2"] + self.params[f"{prefix}.ffn.b2"],
                            self.params[f"{prefix}.ln2.scale"],
                            self.params[f"{prefix}.ln2.bias"], LN_EPS)
        if training and self.cfg.dropout > 0.0:
            out = ad.dropout(out, self.cfg.dropout, rng)
        return out

    def encode(self, states: Tensor, training: bool = False, rng=None) -> Tensor:
        """Stacked masked self-attention blocks; row i sees rows <= i only."""
        h = states
        for n in range(self.cfg.blocks):
            h = self._ffn(self._self_attention(h, f"enc{n}", self.mask), f"enc{n}", training, rng)
        return h

    def decode(self, shifted_states: Tensor, memory: Tensor, training: bool = False,
               rng=None) -> Tensor:
        """Decoder: per block, masked self-attention over the shifted states
        provides the queries; keys and values come from the encoder output."""
        h = shifted_states
        for n in range(self.cfg.blocks):
            q_wide = self._self_attention(h, f"dec{n}.self", self.mask)
            z = self._cross_attention(q_wide, memory, f"dec{n}.cross", self.mask)
            h = self._ffn(z, f"dec{n}", training, rng)
        return h

    def structure(self, seeds: Tensor, training: bool = False, rng=None) -> Tensor:
        """Unmasked attention over per-sequence sums (rows mix across the
        whole batch; no positional information, no mask)."""
        h = seeds
        for n in range(self.cfg.blocks):
            h = self._ffn(self._self_attention(h, f"strc{n}", 0.0), f"strc{n}", training, rng)
        return h

    def fuse(self, r_vertex: Tensor, r_structure: Tensor, training: bool = False,
             rng=None) -> Tensor:
        """Combine an edge-formation embedding with its structure embedding.

        No dropout here: the output is written into the representation table
        and scored directly by the losses, so noise on it destabilizes the
        softmax terms instead of regularizing the network.
        """
        mixed = r_vertex + r_structure
        inner = ad.relu(mixed @ self.params["fuse.W1"] + self.params["fuse.b1"] + mixed)
        return ad.layer_norm(inner @ self.params["fuse.W2"] + self.params["fuse.b2"],
                             self.params["fuse.ln.scale"], self.params["fuse.ln.bias"], LN_EPS)

    def forward_sequences(self, vids: np.ndarray, decay_div: np.ndarray,
                          training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Encoder output and per-slot edge-formation embeddings for a batch.

        ``vids``/``decay_div`` carry one extra trailing EOS slot beyond the
        padded length so the decoder's shifted input is fully populated.
        """
        slots = self.cfg.slots
        if vids.shape[1] != slots + 1:
            raise ValueError(f"expected {slots + 1} columns (padded length + 1), got {vids.shape[1]}")
        states = self.run_time_lstm(vids, decay_div)
        h_v = states[:, :slots, :]
        h_shift = states[:, 1:, :]
        memory = self.encode(h_v, training, rng)
        rhat = self.decode(h_shift, memory, training, rng)
        return memory, rhat


def visibility_weights(slots: int, max_len: int) -> np.ndarray:
    """Row p: summation weights over the padded slots when only slots <= p
    have joined. Visible leading slots contribute their own embedding; hidden
    slots among the first max_len contribute the trailing EOS slot's
    embedding instead; the trailing EOS slot itself is never summed directly.
    """
    w = np.zeros((slots, slots))
    for p in range(slots):
        vis = min(p + 1, max_len)
        w[p, :vis] = 1.0
        w[p, slots - 1] += max_len - vis
    return w


# -- checkpoints ---------------------------------------------------------

def save_checkpoint(model: EmbeddingModel, path) -> None:
    names = list(model.params)
    header = {
        "config": asdict(model.cfg),
        "config_digest": model.cfg.digest(),
        "params": [[n, list(model.params[n].value.shape)] for n in names],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(head)), head]
    parts.append(model.r_table.astype("<f8").tobytes())
    for n in names:
        parts.append(model.params[n].value.astype("<f8").tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


def load_checkpoint(path) -> EmbeddingModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 44 or blob[:4] != CHECKPOINT_MAGIC:
        raise GraphFormatError("not a checkpoint file (bad magic)")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise GraphFormatError("checksum mismatch")
    version, head_len = struct.unpack_from("<II", payload, 4)
    if version != CHECKPOINT_VERSION:
        raise GraphFormatError(f"unsupported version {version}")
    header = json.loads(payload[12:12 + head_len].decode("utf-8"))
    cfg = ModelConfig(**header["config"])
    if cfg.digest() != header["config_digest"]:
        raise GraphFormatError("config digest mismatch")
    pos = 12 + head_len
    n_rows = cfg.n_vertices + 1
    r_table = np.frombuffer(payload, dtype="<f8", count=n_rows * cfg.k, offset=pos)
    r_table = r_table.reshape(n_rows, cfg.k).astype(np.float64)
    pos += 8 * n_rows * cfg.k
    model = EmbeddingModel(cfg, r_init=r_table)
    for name, shape in header["params"]:
        size = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        if name not in model.params or model.params[name].value.shape != tuple(shape):
            raise GraphFormatError(f"unexpected parameter {name} {shape}")
        model.params[name].value = arr.astype(np.float64)
    return model
