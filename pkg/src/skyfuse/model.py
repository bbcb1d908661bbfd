"""Transformer encoder classifier over (batch, time, feature) sequences.

projection -> + sinusoidal positions -> N post-norm encoder layers ->
mean over time -> layer norm -> linear/GELU/dropout/linear head.
"""
from __future__ import annotations

import io
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import ArtifactIOError, ContractError, DimensionError, FormatError, ParameterError
from .rng import numpy_rng
from .tensorkit import Tensor, container
from .tensorkit import ops

LN_EPS = 1e-5

ParameterSet = Dict[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 128
    target_seq_len: int = 1000
    d_model: int = 256
    num_heads: int = 4
    num_layers: int = 2
    dim_feedforward: int = 1024
    dropout: float = 0.2
    num_classes: int = 5
    head_hidden: int = 512  # 0 collapses the head to one linear layer

    def __post_init__(self):
        for name in ("feature_dim", "target_seq_len", "d_model", "num_heads", "dim_feedforward", "num_classes"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_layers < 0 or self.head_hidden < 0:
            raise ParameterError("num_layers and head_hidden must be non-negative")
        if self.d_model % self.num_heads:
            raise ParameterError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")
        if self.d_model % 2:
            raise ParameterError("d_model must be even for sinusoidal positions")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in types:
                raise FormatError(f"unknown model config key {key!r}")
            kw[key] = float(val) if types[key] in (float, "float") else int(val)
        return cls(**kw)


TINY = ModelConfig(feature_dim=128, target_seq_len=1000, d_model=16, num_heads=2, num_layers=1,
                   dim_feedforward=32, dropout=0.1, num_classes=5, head_hidden=32)


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    """Name -> shape for every parameter, in canonical order."""
    d, ff = cfg.d_model, cfg.dim_feedforward
    shapes: "OrderedDict[str, tuple]" = OrderedDict()
    shapes["input_proj.weight"] = (cfg.feature_dim, d)
    shapes["input_proj.bias"] = (d,)
    for i in range(cfg.num_layers):
        p = f"layers.{i}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "ffn.1.weight"] = (d, ff)
        shapes[p + "ffn.1.bias"] = (ff,)
        shapes[p + "ffn.2.weight"] = (ff, d)
        shapes[p + "ffn.2.bias"] = (d,)
        for norm in ("norm1", "norm2"):
            shapes[p + f"{norm}.gain"] = (d,)
            shapes[p + f"{norm}.bias"] = (d,)
    shapes["final_norm.gain"] = (d,)
    shapes["final_norm.bias"] = (d,)
    if cfg.head_hidden:
        shapes["head.1.weight"] = (d, cfg.head_hidden)
        shapes["head.1.bias"] = (cfg.head_hidden,)
        shapes["head.2.weight"] = (cfg.head_hidden, cfg.num_classes)
    else:
        shapes["head.2.weight"] = (d, cfg.num_classes)
    shapes["head.2.bias"] = (cfg.num_classes,)
    return shapes


def param_breakdown(cfg: ModelConfig) -> Dict[str, int]:
    """Closed-form parameter totals per component."""
    d, ff, f = cfg.d_model, cfg.dim_feedforward, cfg.feature_dim
    per_layer = 4 * (d * d + d) + (d * ff + ff) + (ff * d + d) + 4 * d
    head_in = cfg.head_hidden or d
    return {
        "input_proj": f * d + d,
        "encoder": cfg.num_layers * per_layer,
        "final_norm": 2 * d,
        "head_hidden": d * cfg.head_hidden + cfg.head_hidden,
        "head_out": head_in * cfg.num_classes + cfg.num_classes,
    }


def param_count(cfg: ModelConfig) -> int:
    return sum(param_breakdown(cfg).values())


def count_instantiated(params: ParameterSet) -> int:
    return sum(int(t.size) for t in params.values())


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParameterSet:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0; norm gains 1."""
    rng = numpy_rng(seed)
    params: ParameterSet = OrderedDict()
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".weight"):
            bound = 1.0 / math.sqrt(shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gain"):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, dtype=dtype)
    return params


def cast_params(params: ParameterSet, dtype) -> ParameterSet:
    return OrderedDict((k, Tensor(v.data.astype(dtype), requires_grad=True, dtype=dtype)) for k, v in params.items())


@lru_cache(maxsize=8)
def _pe_table(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.empty((max_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    pe.setflags(write=False)
    return pe


def positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    """PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(same)."""
    if max_len <= 0 or d_model <= 0:
        raise ParameterError("positional table extents must be positive")
    if d_model % 2:
        raise ParameterError(f"d_model must be even, got {d_model}")
    return _pe_table(max_len, d_model)


def _heads(t: Tensor, b: int, n: int, h: int, dh: int) -> Tensor:
    return ops.transpose(ops.reshape(t, (b, n, h, dh)), (0, 2, 1, 3))


def multi_head_attention(x: Tensor, params: ParameterSet, prefix: str, cfg: ModelConfig,
                         return_weights: bool = False):
    """Unmasked scaled dot-product self-attention over all positions."""
    if x.ndim != 3 or x.shape[-1] != cfg.d_model:
        raise ContractError(f"attention input must be (B, L, {cfg.d_model}), got {x.shape}")
    b, n, _ = x.shape
    if n > cfg.target_seq_len:
        raise ContractError(f"sequence length {n} exceeds target_seq_len {cfg.target_seq_len}")
    h, dh = cfg.num_heads, cfg.head_dim
    p = lambda s: params[prefix + s]
    q = _heads(ops.linear(x, p("q.weight"), p("q.bias")), b, n, h, dh)
    k = _heads(ops.linear(x, p("k.weight"), p("k.bias")), b, n, h, dh)
    v = _heads(ops.linear(x, p("v.weight"), p("v.bias")), b, n, h, dh)
    scores = ops.matmul(ops.scale(q, 1.0 / math.sqrt(dh)), ops.transpose(k))
    weights = ops.softmax(scores, axis=-1)
    ctx = ops.matmul(weights, v)
    ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (b, n, cfg.d_model))
    out = ops.linear(ctx, p("o.weight"), p("o.bias"))
    return (out, weights.data) if return_weights else out


def encoder_layer(x: Tensor, params: ParameterSet, index: int, cfg: ModelConfig, training: bool = False,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    """Post-norm block: y = LN(x + drop(MHA(x))); out = LN(y + drop(FFN(y)))."""
    pre = f"layers.{index}."
    p = lambda s: params[pre + s]
    attn = multi_head_attention(x, params, pre + "attn.", cfg)
    y = ops.layer_norm(ops.add(x, ops.dropout(attn, cfg.dropout, training, rng)), p("norm1.gain"), p("norm1.bias"), LN_EPS)
    hidden = ops.dropout(ops.gelu(ops.linear(y, p("ffn.1.weight"), p("ffn.1.bias"))), cfg.dropout, training, rng)
    ffn = ops.linear(hidden, p("ffn.2.weight"), p("ffn.2.bias"))
    return ops.layer_norm(ops.add(y, ops.dropout(ffn, cfg.dropout, training, rng)), p("norm2.gain"), p("norm2.bias"), LN_EPS)


def forward(x, params: ParameterSet, cfg: ModelConfig, training: bool = False,
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Raw class logits, shape (B, num_classes)."""
    dtype = params["input_proj.weight"].dtype
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=dtype), dtype=dtype)
    if x.ndim != 3 or x.shape[1:] != (cfg.target_seq_len, cfg.feature_dim):
        raise DimensionError(f"input must be (B, {cfg.target_seq_len}, {cfg.feature_dim}), got {x.shape}")
    n = x.shape[1]
    h = ops.linear(x, params["input_proj.weight"], params["input_proj.bias"])
    pe = positional_encoding(cfg.target_seq_len, cfg.d_model)[:n].astype(dtype)
    h = ops.add(h, Tensor(pe, dtype=dtype))
    for i in range(cfg.num_layers):
        h = encoder_layer(h, params, i, cfg, training, rng)
    pooled = ops.mean_axis(h, 1)
    z = ops.layer_norm(pooled, params["final_norm.gain"], params["final_norm.bias"], LN_EPS)
    if cfg.head_hidden:
        z = ops.linear(z, params["head.1.weight"], params["head.1.bias"])
        z = ops.dropout(ops.gelu(z), cfg.dropout, training, rng)
    return ops.linear(z, params["head.2.weight"], params["head.2.bias"])


def predict_proba(x, params: ParameterSet, cfg: ModelConfig) -> np.ndarray:
    from .tensorkit import no_grad

    with no_grad():
        logits = forward(x, params, cfg, training=False).data.astype(np.float64)
    return ops.softmax_array(logits, axis=-1)


# checkpoints: params.bin holds concatenated SKYF containers located through
# manifest.tsv (name, shape, byte offset); config.txt holds the ModelConfig.

def save_checkpoint(path, params: ParameterSet, cfg: ModelConfig, extra: Optional[Dict[str, str]] = None) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        offset = 0
        with open(out / "params.bin", "wb") as fh:
            for name, t in params.items():
                rows.append(f"{name}\t{','.join(str(s) for s in t.shape)}\t{offset}")
                offset += container.write(fh, t.data.astype(np.float32))
        (out / "manifest.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        text = cfg.to_text()
        if extra:
            text += "".join(f"# {k}={v}\n" for k, v in extra.items())
        (out / "config.txt").write_text(text, encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write checkpoint {out}: {e}") from e
    return out


def load_checkpoint(path):
    """Returns (params, cfg)."""
    d = Path(path)
    try:
        cfg = ModelConfig.from_text((d / "config.txt").read_text(encoding="utf-8"))
        manifest = (d / "manifest.tsv").read_text(encoding="utf-8").splitlines()
        blob = (d / "params.bin").read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"cannot read checkpoint {d}: {e}; run `skyfuse train` first") from e

    params: ParameterSet = OrderedDict()
    for line in manifest:
        if not line.strip():
            continue
        name, shape_txt, off = line.split("\t")
        shape = tuple(int(s) for s in shape_txt.split(",") if s)
        stream = io.BytesIO(blob)
        stream.seek(int(off))
        arr = container.read_from(stream, f"{d / 'params.bin'}:{name}")
        if arr.shape != shape:
            raise FormatError(f"checkpoint entry {name}: manifest shape {shape} but stored {arr.shape}")
        params[name] = Tensor(arr, requires_grad=True, dtype=np.float32)
    expected = param_shapes(cfg)
    if list(expected) != list(params) or any(expected[k] != params[k].shape for k in expected):
        raise FormatError(f"checkpoint {d} does not match its config")
    return params, cfg
