"""Parameter counts, analytic FLOPs and measured inference throughput."""
from __future__ import annotations

import configparser
import io
import platform
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import FormatError, ParameterError
from .model import ModelConfig, ParameterSet, forward, param_count
from .rng import numpy_rng
from .tensorkit import no_grad

# reference values printed beside ours; they are not targets
REFERENCE_GFLOPS = 1.09
REFERENCE_PARAMS_M = 1.22
REFERENCE_FPS = 41.11


def flops_breakdown(cfg: ModelConfig, seq_len: Optional[int] = None) -> Dict[str, float]:
    """Per-sample FLOPs per component, counting a multiply-add as 2 operations.

    Only matrix products are counted: a (m x k) @ (k x n) product costs
    2*m*k*n. Softmax, GELU, layer norm, bias adds and pooling are ignored.
    """
    n = cfg.target_seq_len if seq_len is None else seq_len
    d, ff = cfg.d_model, cfg.dim_feedforward
    per_layer_proj = 4 * 2 * n * d * d            # Q, K, V and output projections
    per_layer_attn = 2 * (2 * n * n * d)          # Q K^T and weights @ V over all heads
    per_layer_ffn = 2 * n * d * ff + 2 * n * ff * d
    head_in = cfg.head_hidden or d
    return {
        "input_proj": 2.0 * n * cfg.feature_dim * d,
        "attention_proj": float(cfg.num_layers * per_layer_proj),
        "attention_scores": float(cfg.num_layers * per_layer_attn),
        "ffn": float(cfg.num_layers * per_layer_ffn),
        "head_hidden": 2.0 * d * cfg.head_hidden,
        "head_out": 2.0 * head_in * cfg.num_classes,
    }


def estimate_flops(cfg: ModelConfig, seq_len: Optional[int] = None) -> float:
    return float(sum(flops_breakdown(cfg, seq_len).values()))


@dataclass
class ThroughputResult:
    fps: float
    cv: float
    batch: int
    warmup: int
    iters: int
    repeats: int


def benchmark_fps(params: ParameterSet, cfg: ModelConfig, batch: int = 1, warmup: int = 5, iters: int = 10,
                  seed: int = 0, repeats: int = 3) -> ThroughputResult:
    """Eval-mode samples per second over ``iters`` timed forwards after ``warmup``.

    The measurement is repeated ``repeats`` times; ``fps`` is the mean and
    ``cv`` the coefficient of variation across repeats.
    """
    if iters < 1 or batch < 1 or repeats < 1 or warmup < 0:
        raise ParameterError("iters, batch and repeats must be positive; warmup non-negative")
    rng = numpy_rng(seed)
    dtype = params["input_proj.weight"].dtype
    x = rng.standard_normal((batch, cfg.target_seq_len, cfg.feature_dim)).astype(dtype)
    rates = []
    with no_grad():
        for _ in range(warmup):
            forward(x, params, cfg, training=False)
        for _ in range(repeats):
            t0 = time.perf_counter()
            for _ in range(iters):
                forward(x, params, cfg, training=False)
            rates.append(batch * iters / (time.perf_counter() - t0))
    rates = np.asarray(rates)
    cv = float(rates.std() / rates.mean()) if len(rates) > 1 else 0.0
    return ThroughputResult(float(rates.mean()), cv, batch, warmup, iters, repeats)


@dataclass
class ProfileReport:
    parameter_count: int
    flops_per_sample: float
    throughput_fps: float
    throughput_cv: float
    batch: int
    warmup: int
    iters: int
    environment: str
    seq_len: int = 1000
    warmup_flag: str = ""

    @property
    def gflops(self) -> float:
        return self.flops_per_sample / 1e9

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["profile"] = {f.name: repr(getattr(self, f.name)) if f.type in ("float",) else str(getattr(self, f.name))
                         for f in fields(self)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "ProfileReport":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
            sec = cp["profile"]
            kw = {}
            for f in fields(cls):
                raw = sec[f.name]
                kw[f.name] = float(raw) if f.type == "float" else int(raw) if f.type == "int" else raw
        except (KeyError, ValueError, configparser.Error) as e:
            raise FormatError(f"malformed profile report: {e}") from e
        return cls(**kw)

    def to_table(self) -> str:
        d = asdict(self)
        return "key\tvalue\n" + "".join(f"{k}\t{v!r}\n" if isinstance(v, float) else f"{k}\t{v}\n" for k, v in d.items())

    def summary(self) -> str:
        lines = [
            "Computational Cost",
            f"  Floating point operation  {self.gflops:8.2f} GFLOPs   (reference {REFERENCE_GFLOPS} GFLOPs)",
            f"  Model parameters          {self.parameter_count / 1e6:8.2f} M        (reference {REFERENCE_PARAMS_M} M)",
            f"  Inference speed           {self.throughput_fps:8.2f} FPS      (reference {REFERENCE_FPS} FPS)",
            f"  throughput cv {self.throughput_cv:.3f}, batch {self.batch}, warmup {self.warmup}, iters {self.iters}",
            f"  environment: {self.environment}",
        ]
        if self.warmup_flag:
            lines.append(f"  note: {self.warmup_flag}")
        return "\n".join(lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ProfileReport":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def environment() -> str:
    return f"{platform.system()} {platform.machine()} python {platform.python_version()} numpy {np.__version__}"


def profile(params: ParameterSet, cfg: ModelConfig, batch: int = 1, warmup: int = 5, iters: int = 10,
            seed: int = 0) -> ProfileReport:
    tp = benchmark_fps(params, cfg, batch, warmup, iters, seed)
    return ProfileReport(
        parameter_count=param_count(cfg),
        flops_per_sample=estimate_flops(cfg),
        throughput_fps=tp.fps,
        throughput_cv=tp.cv,
        batch=batch,
        warmup=warmup,
        iters=iters,
        environment=environment(),
        seq_len=cfg.target_seq_len,
        warmup_flag="warmup=0: first-call overheads are included" if warmup == 0 else "",
    )
