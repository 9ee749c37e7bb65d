"""Encoder-decoder forecasting model: sparse or dense multi-head attention,
sinusoidal positional encoding, and a linear or tanh-sandwich output head."""

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .attention import AttentionConfig, MultiHeadParams, default_k, multi_head
from .errors import ConfigError, DataError, ShapeError
from .tensor import (Tensor, activation, add, add_bias, layer_norm, matmul)

CHECKPOINT_MAGIC = "hydroformer-checkpoint"
CHECKPOINT_VERSION = 1

TARGET_COLUMN = "ch_wl"


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Defaults follow the published
    configuration; desk_scale() gives a small variant for fast runs."""
    d_model: int = 512
    n_heads: int = 8
    n_encoder_layers: int = 1
    n_decoder_layers: int = 2
    d_ffn: int = 2048
    attention_mode: str = "dense"          # "dense" | "sparse"
    k_sparse: int | None = None            # None -> ceil(L/4) at runtime
    output_head: str = "linear"            # "linear" | "nonlinear"
    head_activation: str = "tanh"
    n_features: int = 19
    lookback: int = 30
    horizon: int = 1

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_encoder_layers", "n_decoder_layers",
                     "d_ffn", "n_features", "lookback", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.attention_mode not in ("dense", "sparse"):
            raise ConfigError(f"attention_mode must be dense or sparse, got {self.attention_mode!r}")
        if self.output_head not in ("linear", "nonlinear"):
            raise ConfigError(f"output_head must be linear or nonlinear, got {self.output_head!r}")
        if self.k_sparse is not None and self.k_sparse < 1:
            raise ConfigError("k_sparse must be >= 1")

    @classmethod
    def desk_scale(cls, **overrides):
        base = dict(d_model=32, n_heads=2, d_ffn=64)
        base.update(overrides)
        return cls(**base)

    def effective_k(self, length: int) -> int | None:
        if self.attention_mode == "dense":
            return None
        return self.k_sparse if self.k_sparse is not None else default_k(length)


@dataclass
class PositionalEncoding:
    """Fixed sinusoid table: even columns sin(pos / 10000^(2i/d)), odd cos."""
    max_len: int
    d_model: int
    table: np.ndarray = field(init=False)

    def __post_init__(self):
        pos = np.arange(self.max_len)[:, None].astype(np.float64)
        i = np.arange(0, self.d_model, 2).astype(np.float64)
        angle = pos / np.power(10000.0, i / self.d_model)
        table = np.zeros((self.max_len, self.d_model))
        table[:, 0::2] = np.sin(angle)
        table[:, 1::2] = np.cos(angle[:, : table[:, 1::2].shape[1]])
        self.table = table

    def slice(self, length: int) -> np.ndarray:
        if length > self.max_len:
            raise ShapeError(f"sequence length {length} exceeds positional table {self.max_len}")
        return self.table[:length]


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class TransformerModel:
    """Parameter container plus the forward / autoregressive-predict paths.

    Parameters live in an ordered name->Tensor map; shapes are a pure
    function of the config.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.pe = PositionalEncoding(max(config.lookback, config.horizon), config.d_model)
        self._init_params(np.random.default_rng(seed))

    # -- construction -------------------------------------------------------

    def _add(self, name, arr):
        self.params[name] = Tensor(arr, requires_grad=True)

    def _add_mha(self, prefix, rng):
        c = self.config
        for h in range(c.n_heads):
            self._add(f"{prefix}.h{h}.wq", _glorot(rng, c.d_model, c.d_model // c.n_heads))
            self._add(f"{prefix}.h{h}.wk", _glorot(rng, c.d_model, c.d_model // c.n_heads))
            self._add(f"{prefix}.h{h}.wv", _glorot(rng, c.d_model, c.d_model // c.n_heads))
        self._add(f"{prefix}.wo", _glorot(rng, c.d_model, c.d_model))

    def _add_ln(self, prefix):
        d = self.config.d_model
        self._add(f"{prefix}.gamma", np.ones(d))
        self._add(f"{prefix}.beta", np.zeros(d))

    def _add_ffn(self, prefix, rng):
        c = self.config
        self._add(f"{prefix}.w1", _glorot(rng, c.d_model, c.d_ffn))
        self._add(f"{prefix}.b1", np.zeros(c.d_ffn))
        self._add(f"{prefix}.w2", _glorot(rng, c.d_ffn, c.d_model))
        self._add(f"{prefix}.b2", np.zeros(c.d_model))

    def _init_params(self, rng):
        c = self.config
        self._add("enc_embed.w", _glorot(rng, c.n_features, c.d_model))
        self._add("dec_embed.w", _glorot(rng, 1, c.d_model))
        for i in range(c.n_encoder_layers):
            self._add_mha(f"enc.{i}.attn", rng)
            self._add_ln(f"enc.{i}.ln1")
            self._add_ffn(f"enc.{i}.ffn", rng)
            self._add_ln(f"enc.{i}.ln2")
        for i in range(c.n_decoder_layers):
            self._add_mha(f"dec.{i}.self_attn", rng)
            self._add_ln(f"dec.{i}.ln1")
            self._add_mha(f"dec.{i}.cross_attn", rng)
            self._add_ln(f"dec.{i}.ln2")
            self._add_ffn(f"dec.{i}.ffn", rng)
            self._add_ln(f"dec.{i}.ln3")
        if c.output_head == "linear":
            self._add("head.w", _glorot(rng, c.d_model, 1))
            self._add("head.b", np.zeros(1))
        else:
            self._add("head.w1", _glorot(rng, c.d_model, c.d_model))
            self._add("head.b1", np.zeros(c.d_model))
            self._add("head.w2", _glorot(rng, c.d_model, 1))
            self._add("head.b2", np.zeros(1))

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()

    # -- forward pieces -----------------------------------------------------

    def _mha_params(self, prefix) -> MultiHeadParams:
        p = self.params
        n = self.config.n_heads
        return MultiHeadParams(
            wq=[p[f"{prefix}.h{h}.wq"] for h in range(n)],
            wk=[p[f"{prefix}.h{h}.wk"] for h in range(n)],
            wv=[p[f"{prefix}.h{h}.wv"] for h in range(n)],
            wo=p[f"{prefix}.wo"])

    def _ln(self, prefix, x):
        return layer_norm(x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"])

    def _ffn(self, prefix, x):
        p = self.params
        h = activation(add_bias(matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]), "relu")
        return add_bias(matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])

    def _attn_cfg(self, length, causal) -> AttentionConfig:
        c = self.config
        return AttentionConfig(d_model=c.d_model, n_heads=c.n_heads,
                               k_sparse=c.effective_k(length), causal=causal)

    def embed_encoder(self, window) -> Tensor:
        x = window if isinstance(window, Tensor) else Tensor(window)
        if x.data.shape[1] != self.config.n_features:
            raise ShapeError(f"window width {x.data.shape[1]} != n_features {self.config.n_features}")
        emb = matmul(x, self.params["enc_embed.w"])
        return add(emb, Tensor(self.pe.slice(x.data.shape[0])))

    def embed_decoder(self, decoder_in) -> Tensor:
        y = decoder_in if isinstance(decoder_in, Tensor) else Tensor(decoder_in)
        if y.data.ndim != 2 or y.data.shape[1] != 1:
            raise ShapeError(f"decoder input must be Hx1, got {y.data.shape}")
        emb = matmul(y, self.params["dec_embed.w"])
        return add(emb, Tensor(self.pe.slice(y.data.shape[0])))

    def encoder_forward(self, x_emb: Tensor) -> Tensor:
        cfg = self._attn_cfg(x_emb.data.shape[0], causal=False)
        x = x_emb
        for i in range(self.config.n_encoder_layers):
            h = self._ln(f"enc.{i}.ln1",
                         add(x, multi_head(x, x, x, cfg, self._mha_params(f"enc.{i}.attn"))))
            x = self._ln(f"enc.{i}.ln2", add(h, self._ffn(f"enc.{i}.ffn", h)))
        return x

    def decoder_forward(self, y_emb: Tensor, memory: Tensor) -> Tensor:
        h_len = y_emb.data.shape[0]
        self_cfg = self._attn_cfg(h_len, causal=True)
        cross_cfg = self._attn_cfg(memory.data.shape[0], causal=False)
        y = y_emb
        for i in range(self.config.n_decoder_layers):
            y = self._ln(f"dec.{i}.ln1",
                         add(y, multi_head(y, y, y, self_cfg,
                                           self._mha_params(f"dec.{i}.self_attn"))))
            y = self._ln(f"dec.{i}.ln2",
                         add(y, multi_head(y, memory, memory, cross_cfg,
                                           self._mha_params(f"dec.{i}.cross_attn"))))
            y = self._ln(f"dec.{i}.ln3", add(y, self._ffn(f"dec.{i}.ffn", y)))
        return y

    def output_head(self, d: Tensor) -> Tensor:
        p = self.params
        if self.config.output_head == "linear":
            return add_bias(matmul(d, p["head.w"]), p["head.b"])
        hidden = activation(add_bias(matmul(d, p["head.w1"]), p["head.b1"]),
                            self.config.head_activation)
        return add_bias(matmul(hidden, p["head.w2"]), p["head.b2"])

    def forward(self, window, decoder_in) -> Tensor:
        """Teacher-forced forward: window is lookback x n_features, decoder_in
        is H x 1 target-channel values; returns H x 1 predictions."""
        memory = self.encoder_forward(self.embed_encoder(window))
        dec = self.decoder_forward(self.embed_decoder(decoder_in), memory)
        return self.output_head(dec)

    def predict(self, window, horizon: int) -> np.ndarray:
        """Greedy autoregressive rollout in normalized space. The start token
        is the last observed target value in the window; each prediction is
        fed back as the next decoder input. Returns an (horizon, 1) array."""
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        window = np.asarray(window, dtype=np.float64)
        target_idx = self._target_index()
        memory = self.encoder_forward(self.embed_encoder(window))
        memory = Tensor(memory.data)  # frozen: rollout never backpropagates
        dec = [float(window[-1, target_idx])]
        preds = []
        for t in range(horizon):
            emb = self.embed_decoder(np.array(dec, dtype=np.float64)[:, None])
            out = self.output_head(self.decoder_forward(emb, memory))
            preds.append(float(out.data[t, 0]))
            dec.append(preds[-1])
        return np.array(preds)[:, None]

    def _target_index(self) -> int:
        # fixed schema position of the target channel (see data.FEATURE_COLUMNS)
        from .data import FEATURE_COLUMNS
        return FEATURE_COLUMNS.index(TARGET_COLUMN)

    # -- state --------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) ^ set(state)
            raise DataError(f"parameter name mismatch: {sorted(missing)}")
        for name, arr in state.items():
            if arr.shape != self.params[name].data.shape:
                raise DataError(f"parameter {name}: shape {arr.shape} != "
                                f"{self.params[name].data.shape}")
            self.params[name].data = np.asarray(arr, dtype=np.float64)


# ---------------------------------------------------------------------------
# checkpoint format: one JSON header line (config, normalizer, parameter
# manifest, version), then the raw little-endian float64 parameter buffers in
# manifest order. Fully deterministic bytes for a given model state.

def save_checkpoint(model: TransformerModel, normalizer, path) -> None:
    names = sorted(model.params)
    header = {
        "magic": CHECKPOINT_MAGIC,
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "normalizer": None if normalizer is None else normalizer.to_dict(),
        "params": [{"name": n, "shape": list(model.params[n].data.shape)} for n in names],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for n in names:
            f.write(np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (model, normalizer); normalizer may be None."""
    from .data import Normalizer
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"not a checkpoint file: {path}") from e
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise DataError(f"not a checkpoint file: {path}")
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {header.get('format_version')}")
        model = TransformerModel(ModelConfig(**header["config"]))
        state = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            n_bytes = int(np.prod(shape)) * 8
            buf = f.read(n_bytes)
            if len(buf) != n_bytes:
                raise DataError("checkpoint truncated")
            state[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        model.load_state_arrays(state)
    norm = None
    if header["normalizer"] is not None:
        norm = Normalizer.from_dict(header["normalizer"])
    return model, norm


def checkpoint_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
