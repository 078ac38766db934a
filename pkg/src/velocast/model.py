"""Encoder-decoder network over OD-pair graphs with a calendar embedding.

Forward dataflow for one timestamp:

    features [N, L] --(+ tiled calendar embedding E_T)--> [N, L+p]
        -> spatial encoder: K_e residual multi-graph conv blocks -> [N, h_s]
    lag columns as a 4-step sequence of [1, N] inputs
        -> gated recurrent cell -> temporal state [1, h_t]
    concat per row: [N, h_s + h_t]
        -> decoder: K_d residual multi-graph conv blocks -> [N, h_s]
        -> linear head -> [N]

Each multi-graph block convolves with all 7 normalized adjacency matrices
at once: Z = [Ã_1 H | ... | Ã_7 H], out = act(Z W + b) + residual(H).
Training mode applies inverted dropout after every block and after every
embedding dense-module layer; inference is deterministic and clamps the
output at zero (demand cannot be negative).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .features import CALENDAR_SIZES, CalendarEncoding, FeatureSpec, VARIANTS
from .graphs import AdjacencyStack, MATRIX_NAMES
from .numerics import (
    ACTIVATIONS, Tensor, add, concat, dropout_mask, glorot_uniform, matmul,
    mul, sigmoid, slice_rows, tanh, tile_rows,
)
from .serialize import load_arrays, save_arrays

__all__ = [
    "EmbeddingConfig", "ModelConfig", "Dense", "ResidualGraphConv",
    "GRUCell", "LSTMCell", "TimeEmbedding", "ForecastNetwork",
    "tile_and_concat", "save_model", "load_model",
]

N_GRAPHS = len(MATRIX_NAMES)


@dataclass(frozen=True)
class EmbeddingConfig:
    """Calendar-embedding sizes: 6 parallel branches, then a 3-layer dense
    module squeezing the concatenation down to p."""

    embed_width: int = 5
    branch_width: int = 5
    hidden_widths: tuple[int, int] = (32, 16)
    p: int = 10

    def __post_init__(self):
        sizes = (self.embed_width, self.branch_width, *self.hidden_widths,
                 self.p)
        if any(s < 1 for s in sizes):
            raise ModelError(f"embedding sizes must be positive, got {sizes}")


@dataclass(frozen=True)
class ModelConfig:
    h_t: int = 64
    h_s: int = 64
    k_e: int = 3
    k_d: int = 3
    activation: str = "relu"
    dropout: float = 0.7
    cell: str = "gru"
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    variant: FeatureSpec = field(default_factory=lambda: VARIANTS["X"])

    def __post_init__(self):
        if min(self.h_t, self.h_s, self.k_e, self.k_d) < 1:
            raise ModelError("h_t, h_s, k_e, k_d must all be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.activation not in ACTIVATIONS:
            raise ModelError(
                f"unknown activation {self.activation!r}; choose from "
                f"{sorted(ACTIVATIONS)}"
            )
        if self.cell not in ("gru", "lstm"):
            raise ModelError(f"cell must be 'gru' or 'lstm', got {self.cell!r}")

    def to_dict(self) -> dict:
        return {
            "h_t": self.h_t, "h_s": self.h_s, "k_e": self.k_e,
            "k_d": self.k_d, "activation": self.activation,
            "dropout": self.dropout, "cell": self.cell,
            "embedding": {
                "embed_width": self.embedding.embed_width,
                "branch_width": self.embedding.branch_width,
                "hidden_widths": list(self.embedding.hidden_widths),
                "p": self.embedding.p,
            },
            "variant": self.variant.variant,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        emb = doc["embedding"]
        return cls(
            h_t=doc["h_t"], h_s=doc["h_s"], k_e=doc["k_e"], k_d=doc["k_d"],
            activation=doc["activation"], dropout=doc["dropout"],
            cell=doc["cell"],
            embedding=EmbeddingConfig(
                embed_width=emb["embed_width"],
                branch_width=emb["branch_width"],
                hidden_widths=tuple(emb["hidden_widths"]), p=emb["p"],
            ),
            variant=FeatureSpec.for_variant(doc["variant"]),
        )


def _apply_act(name: str, x: Tensor) -> Tensor:
    fn = ACTIVATIONS[name]
    return x if fn is None else fn(x)


class Dense:
    """x @ W + b with optional activation."""

    def __init__(self, rng, name: str, fan_in: int, fan_out: int,
                 activation: str = "identity"):
        self.w = glorot_uniform(rng, fan_in, fan_out, name=f"{name}.w")
        self.b = Tensor(np.zeros((1, fan_out)), name=f"{name}.b")
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        return _apply_act(self.activation, add(matmul(x, self.w), self.b))

    def params(self) -> list[Tensor]:
        return [self.w, self.b]


class ResidualGraphConv:
    """One multi-graph convolution block with a residual skip.

    The concatenated convolution weight W spans all 7 graphs: [7*f_in,
    f_out]. When f_in != f_out the skip path projects H linearly.
    """

    def __init__(self, rng, name: str, f_in: int, f_out: int,
                 activation: str = "relu"):
        self.w = glorot_uniform(rng, N_GRAPHS * f_in, f_out,
                                name=f"{name}.w", fan_in=f_in, fan_out=f_out)
        self.b = Tensor(np.zeros((1, f_out)), name=f"{name}.b")
        self.proj = None
        if f_in != f_out:
            self.proj = glorot_uniform(rng, f_in, f_out, name=f"{name}.proj")
        self.activation = activation
        self.f_in, self.f_out = f_in, f_out

    def forward(self, h: Tensor, stack: list[Tensor]) -> Tensor:
        if len(stack) != N_GRAPHS:
            raise ModelError(f"expected {N_GRAPHS} graphs, got {len(stack)}")
        if h.cols != self.f_in:
            raise ModelError(
                f"block expects {self.f_in} input features, got {h.cols}"
            )
        z = concat([matmul(a, h) for a in stack], axis=1)
        out = _apply_act(self.activation, add(matmul(z, self.w), self.b))
        residual = h if self.proj is None else matmul(h, self.proj)
        return add(out, residual)

    def params(self) -> list[Tensor]:
        out = [self.w, self.b]
        if self.proj is not None:
            out.append(self.proj)
        return out


class GRUCell:
    """Gated recurrent unit over [1, n_in] inputs."""

    def __init__(self, rng, name: str, n_in: int, n_hidden: int):
        self.n_hidden = n_hidden
        def w(tag, rows, cols):
            return glorot_uniform(rng, rows, cols, name=f"{name}.{tag}")
        self.w_z, self.u_z = w("w_z", n_in, n_hidden), w("u_z", n_hidden, n_hidden)
        self.w_r, self.u_r = w("w_r", n_in, n_hidden), w("u_r", n_hidden, n_hidden)
        self.w_n, self.u_n = w("w_n", n_in, n_hidden), w("u_n", n_hidden, n_hidden)
        self.b_z = Tensor(np.zeros((1, n_hidden)), name=f"{name}.b_z")
        self.b_r = Tensor(np.zeros((1, n_hidden)), name=f"{name}.b_r")
        self.b_n = Tensor(np.zeros((1, n_hidden)), name=f"{name}.b_n")

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        z = sigmoid(add(add(matmul(x, self.w_z), matmul(h, self.u_z)), self.b_z))
        r = sigmoid(add(add(matmul(x, self.w_r), matmul(h, self.u_r)), self.b_r))
        n = tanh(add(add(matmul(x, self.w_n), matmul(mul(r, h), self.u_n)),
                     self.b_n))
        one_minus_z = add(Tensor(np.ones((1, self.n_hidden))), -1.0 * z)
        return add(mul(one_minus_z, h), mul(z, n))

    def run(self, sequence: list[Tensor]) -> Tensor:
        h = Tensor(np.zeros((1, self.n_hidden)))
        for x in sequence:
            h = self.step(x, h)
        return h

    def params(self) -> list[Tensor]:
        return [self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r,
                self.w_n, self.u_n, self.b_n]


class LSTMCell:
    """Long short-term memory cell; interchangeable with GRUCell."""

    def __init__(self, rng, name: str, n_in: int, n_hidden: int):
        self.n_hidden = n_hidden
        def w(tag, rows, cols):
            return glorot_uniform(rng, rows, cols, name=f"{name}.{tag}")
        self.gates = {}
        for g in ("i", "f", "o", "g"):
            self.gates[g] = (w(f"w_{g}", n_in, n_hidden),
                             w(f"u_{g}", n_hidden, n_hidden),
                             Tensor(np.zeros((1, n_hidden)), name=f"{name}.b_{g}"))

    def _gate(self, g: str, x: Tensor, h: Tensor) -> Tensor:
        wg, ug, bg = self.gates[g]
        pre = add(add(matmul(x, wg), matmul(h, ug)), bg)
        return tanh(pre) if g == "g" else sigmoid(pre)

    def run(self, sequence: list[Tensor]) -> Tensor:
        h = Tensor(np.zeros((1, self.n_hidden)))
        c = Tensor(np.zeros((1, self.n_hidden)))
        for x in sequence:
            i = self._gate("i", x, h)
            f = self._gate("f", x, h)
            o = self._gate("o", x, h)
            g = self._gate("g", x, h)
            c = add(mul(f, c), mul(i, g))
            h = mul(o, tanh(c))
        return h

    def params(self) -> list[Tensor]:
        out = []
        for g in ("i", "f", "o", "g"):
            out.extend(self.gates[g])
        return out


class TimeEmbedding:
    """Six one-hot calendar features -> learned vector E_T of dimension p.

    Each feature owns an embedding table (one-hot linear map = row lookup)
    and a small dense layer; the concatenated branches pass a 3-layer dense
    module. Dropout applies after each dense-module layer in train mode.
    """

    def __init__(self, rng, cfg: EmbeddingConfig, activation: str):
        self.cfg = cfg
        self.activation = activation
        self.tables = [
            glorot_uniform(rng, size, cfg.embed_width, name=f"embed.table{i}")
            for i, size in enumerate(CALENDAR_SIZES)
        ]
        self.branches = [
            Dense(rng, f"embed.branch{i}", cfg.embed_width, cfg.branch_width,
                  activation)
            for i in range(len(CALENDAR_SIZES))
        ]
        widths = [cfg.branch_width * len(CALENDAR_SIZES),
                  *cfg.hidden_widths, cfg.p]
        self.dense_module = [
            Dense(rng, f"embed.dense{i}", widths[i], widths[i + 1], activation)
            for i in range(3)
        ]

    def forward(self, encoding: CalendarEncoding, training: bool,
                dropout: float, rng) -> Tensor:
        encoding.validate()
        parts = []
        for vec, table, branch in zip(encoding.vectors(), self.tables,
                                      self.branches):
            row = int(np.argmax(vec))
            looked_up = slice_rows(table, row, row + 1)
            parts.append(branch.forward(looked_up))
        h = concat(parts, axis=1)
        for layer in self.dense_module:
            h = layer.forward(h)
            mask = dropout_mask(h.shape, dropout, rng, training)
            h = mul(h, mask)
        return h  # [1, p]

    def params(self) -> list[Tensor]:
        out = list(self.tables)
        for branch in self.branches:
            out.extend(branch.params())
        for layer in self.dense_module:
            out.extend(layer.params())
        return out


def tile_and_concat(features: Tensor | np.ndarray,
                    e_t: Tensor | np.ndarray | None) -> Tensor:
    """Append the embedding vector to every feature row: [N, L] -> [N, L+p].

    A missing embedding (or p = 0) returns the features unchanged.
    """
    x = features if isinstance(features, Tensor) else Tensor(features)
    if e_t is None:
        return x
    e = e_t if isinstance(e_t, Tensor) else Tensor(e_t)
    if e.rows != 1:
        raise ModelError(f"embedding must be a single row, got {e.shape}")
    if e.cols == 0:
        return x
    return concat([x, tile_rows(e, x.rows)], axis=1)


class ForecastNetwork:
    """The full network; build with `ForecastNetwork(config, n, l, seed)`.

    n is the OD-pair count, l the feature-column count of the variant.
    Weights are Glorot-uniform, biases zero, all drawn from one seeded
    generator so identical seeds give identical parameters.
    """

    def __init__(self, config: ModelConfig, n: int, l: int, seed: int = 0):
        if l != config.variant.l_dim:
            raise ModelError(
                f"variant {config.variant.variant} expects "
                f"{config.variant.l_dim} feature columns, got {l}"
            )
        self.config = config
        self.n = n
        self.l = l
        self.seed = seed
        rng = np.random.default_rng(seed)
        act = config.activation

        self.embedding = None
        p = 0
        if config.variant.embedding:
            self.embedding = TimeEmbedding(rng, config.embedding, act)
            p = config.embedding.p

        cell_cls = GRUCell if config.cell == "gru" else LSTMCell
        self.temporal = cell_cls(rng, "temporal", n, config.h_t)

        widths = [l + p] + [config.h_s] * config.k_e
        self.encoder = [
            ResidualGraphConv(rng, f"encoder{i}", widths[i], widths[i + 1], act)
            for i in range(config.k_e)
        ]
        dec_widths = [config.h_s + config.h_t] + [config.h_s] * config.k_d
        self.decoder = [
            ResidualGraphConv(rng, f"decoder{i}", dec_widths[i],
                              dec_widths[i + 1], act)
            for i in range(config.k_d)
        ]
        self.head = Dense(rng, "head", config.h_s, 1, "identity")

    def params(self) -> list[Tensor]:
        out = []
        if self.embedding is not None:
            out.extend(self.embedding.params())
        out.extend(self.temporal.params())
        for block in self.encoder:
            out.extend(block.params())
        for block in self.decoder:
            out.extend(block.params())
        out.extend(self.head.params())
        return out

    def _stack_tensors(self, stack: AdjacencyStack) -> list[Tensor]:
        if not stack.normalized:
            raise ModelError("adjacency stack is not normalized")
        if stack.n != self.n:
            raise ModelError(
                f"stack covers {stack.n} OD pairs, model expects {self.n}"
            )
        return [Tensor(m) for m in stack.normalized]

    def forward(self, features: np.ndarray, encoding: CalendarEncoding | None,
                stack: AdjacencyStack, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Return the [N, 1] prediction tensor (no clamping here, so the
        gradient path stays intact for training)."""
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (self.n, self.l):
            raise ModelError(
                f"features shape {features.shape}, expected "
                f"{(self.n, self.l)} for variant {self.config.variant.variant}"
            )
        if training and rng is None:
            raise ModelError("training mode needs an RNG for dropout")
        drop = self.config.dropout
        graphs = self._stack_tensors(stack)
        x = Tensor(features)

        e_t = None
        if self.embedding is not None:
            if encoding is None:
                raise ModelError(
                    f"variant {self.config.variant.variant} needs a calendar "
                    "encoding"
                )
            e_t = self.embedding.forward(encoding, training, drop, rng)
        h = tile_and_concat(x, e_t)

        for block in self.encoder:
            h = block.forward(h, graphs)
            if training:
                h = mul(h, dropout_mask(h.shape, drop, rng, True))

        snapshots = [Tensor(features[:, k].reshape(1, self.n))
                     for k in range(4)]
        h_t = self.temporal.run(snapshots)

        h = concat([h, tile_rows(h_t, self.n)], axis=1)
        for block in self.decoder:
            h = block.forward(h, graphs)
            if training:
                h = mul(h, dropout_mask(h.shape, drop, rng, True))
        return self.head.forward(h)

    def predict(self, features: np.ndarray, encoding: CalendarEncoding | None,
                stack: AdjacencyStack) -> np.ndarray:
        """Inference: deterministic forward, negatives clamped to 0; [N]."""
        out = self.forward(features, encoding, stack, training=False)
        return np.maximum(out.data[:, 0], 0.0)


def save_model(network: ForecastNetwork, path: str,
               scaler_mean: np.ndarray | None = None,
               scaler_scale: np.ndarray | None = None) -> None:
    """Checkpoint: config + all parameters (+ feature scaling constants)."""
    arrays = {p.name: p.data for p in network.params()}
    if scaler_mean is not None:
        arrays["scaler.mean"] = np.asarray(scaler_mean)
        arrays["scaler.scale"] = np.asarray(scaler_scale)
    meta = {
        "format": "velocast-model", "version": 1,
        "config": network.config.to_dict(),
        "n": network.n, "l": network.l, "seed": network.seed,
    }
    save_arrays(path, arrays, meta)


def load_model(path: str) -> tuple[ForecastNetwork, dict[str, np.ndarray]]:
    """Rebuild a checkpointed network; forwards are bit-identical to the
    saved instance. Returns (network, scaler arrays or empty dict)."""
    meta, arrays = load_arrays(path)
    if meta.get("format") != "velocast-model":
        raise ModelError(f"{path}: not a model checkpoint")
    config = ModelConfig.from_dict(meta["config"])
    network = ForecastNetwork(config, meta["n"], meta["l"], meta["seed"])
    for p in network.params():
        if p.name not in arrays:
            raise ModelError(f"{path}: checkpoint missing parameter {p.name}")
        if arrays[p.name].shape != p.data.shape:
            raise ModelError(
                f"{path}: parameter {p.name} has shape "
                f"{arrays[p.name].shape}, expected {p.data.shape}"
            )
        p.data = arrays[p.name].astype(np.float64)
    scaler = {}
    if "scaler.mean" in arrays:
        scaler = {"mean": arrays["scaler.mean"],
                  "scale": arrays["scaler.scale"]}
    return network, scaler
