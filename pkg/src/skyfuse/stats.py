"""Histograms, KL divergence and distribution summaries for replication checks."""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Union

import numpy as np

from .errors import ContractError, FormatError, InputError, ParameterError

KL_EPS = 1e-10
DEFAULT_BINS = 100

Stream = Union[np.ndarray, Iterable[np.ndarray]]


def _chunks(data: Stream):
    if isinstance(data, np.ndarray):
        yield data
        return
    for chunk in data:
        yield np.asarray(chunk)


def _real(chunk: np.ndarray) -> np.ndarray:
    chunk = np.asarray(chunk)
    if np.iscomplexobj(chunk):
        chunk = np.abs(chunk)
    return chunk.reshape(-1).astype(np.float64, copy=False)


@dataclass
class Histogram:
    bin_edges: np.ndarray
    probabilities: np.ndarray
    count: int

    def __post_init__(self):
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ContractError("histogram edges must be strictly ascending")


def histogram(data: Stream, bins: int = DEFAULT_BINS, range=None) -> Histogram:
    """Equal-width histogram; values outside ``range`` are clamped into the end bins.

    ``data`` may be an array or an iterable of array chunks (complex values are
    taken by magnitude). Without ``range`` the data's own min/max is used.
    """
    if bins < 2:
        raise ParameterError("histogram needs at least 2 bins")
    if range is None:
        s = summarize(data)
        lo, hi = s.min, s.max
        if hi <= lo:
            hi = lo + 1.0
    else:
        lo, hi = float(range[0]), float(range[1])
    if not lo < hi:
        raise ParameterError(f"histogram range must satisfy lo < hi, got [{lo}, {hi}]")
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    width = (hi - lo) / bins
    for chunk in _chunks(data):
        v = _real(chunk)
        if v.size == 0:
            continue
        idx = np.floor((np.clip(v, lo, hi) - lo) / width).astype(np.int64)
        np.clip(idx, 0, bins - 1, out=idx)
        counts += np.bincount(idx, minlength=bins)
    total = int(counts.sum())
    if total == 0:
        raise InputError("cannot build a histogram of an empty stream")
    return Histogram(edges, counts / total, total)


def kl_divergence(p: Histogram, q: Histogram) -> float:
    """D(P || Q) in nats over bins where P > 0.

    When Q is empty somewhere P has mass, Q gets 1e-10 added per bin and is
    renormalized so the divergence stays finite; otherwise Q is used as is,
    which keeps D(P || P) exactly zero.
    """
    if p.bin_edges.shape != q.bin_edges.shape or not np.array_equal(p.bin_edges, q.bin_edges):
        raise ContractError("KL divergence needs histograms over identical bin edges")
    pp = p.probabilities
    qq = q.probabilities
    support = pp > 0
    if np.any(qq[support] == 0):
        qq = (qq + KL_EPS) / (1.0 + KL_EPS * qq.size)
    d = float(np.sum(pp[support] * np.log(pp[support] / qq[support])))
    return max(d, 0.0)


def joint_range(a: Stream, b: Stream):
    sa, sb = summarize(a), summarize(b)
    lo, hi = min(sa.min, sb.min), max(sa.max, sb.max)
    return (lo, hi if hi > lo else lo + 1.0)


def kl_between(a: Stream, b: Stream, bins: int = DEFAULT_BINS) -> float:
    """KL of two streams over shared equal-width bins spanning their joint min/max."""
    rng = joint_range(a, b)
    return kl_divergence(histogram(a, bins, rng), histogram(b, bins, rng))


@dataclass
class DistributionSummary:
    min: float
    max: float
    mean: float
    std: float
    count: int


def summarize(data: Stream) -> DistributionSummary:
    """Exact min/max/mean/population std, merged chunk by chunk (Chan's update)."""
    n = 0
    mean = 0.0
    m2 = 0.0
    lo, hi = math.inf, -math.inf
    for chunk in _chunks(data):
        v = _real(chunk)
        if v.size == 0:
            continue
        k = v.size
        cm = float(v.mean())
        cm2 = float(np.sum((v - cm) ** 2))
        delta = cm - mean
        tot = n + k
        mean += delta * k / tot
        m2 += cm2 + delta * delta * n * k / tot
        n = tot
        lo = min(lo, float(v.min()))
        hi = max(hi, float(v.max()))
    if n == 0:
        raise InputError("cannot summarize an empty stream")
    mean = min(max(mean, lo), hi)
    return DistributionSummary(lo, hi, mean, math.sqrt(max(m2, 0.0) / n), n)


@dataclass
class ModalityReport:
    raw: DistributionSummary
    replicated: DistributionSummary
    processed: DistributionSummary
    kl_raw_replicated: float
    kl_raw_processed: float
    n_original: int = 0
    n_replicated: int = 0


@dataclass
class ReplicationReport:
    modalities: Dict[str, ModalityReport] = field(default_factory=dict)
    bins: int = DEFAULT_BINS

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["report"] = {"bins": str(self.bins), "modalities": ",".join(self.modalities)}
        for name, rep in self.modalities.items():
            sec = {
                "n_original": str(rep.n_original),
                "n_replicated": str(rep.n_replicated),
                "kl_raw_replicated": repr(rep.kl_raw_replicated),
                "kl_raw_processed": repr(rep.kl_raw_processed),
            }
            for stage in ("raw", "replicated", "processed"):
                for key, val in asdict(getattr(rep, stage)).items():
                    sec[f"{stage}.{key}"] = repr(val)
            cp[name] = sec
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "ReplicationReport":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
            head = cp["report"]
            names = [m for m in head["modalities"].split(",") if m]
            out = cls(bins=int(head["bins"]))
            for name in names:
                sec = cp[name]

                def summ(stage):
                    return DistributionSummary(
                        float(sec[f"{stage}.min"]), float(sec[f"{stage}.max"]), float(sec[f"{stage}.mean"]),
                        float(sec[f"{stage}.std"]), int(sec[f"{stage}.count"]))

                out.modalities[name] = ModalityReport(
                    summ("raw"), summ("replicated"), summ("processed"),
                    float(sec["kl_raw_replicated"]), float(sec["kl_raw_processed"]),
                    int(sec["n_original"]), int(sec["n_replicated"]))
        except (KeyError, ValueError, configparser.Error) as e:
            raise FormatError(f"malformed replication report: {e}") from e
        return out

    def to_table(self) -> str:
        """Tab-separated rows, one per modality and stage, for plotting."""
        rows = ["modality\tstage\tcount\tmin\tmax\tmean\tstd\tkl_vs_raw"]
        for name, rep in self.modalities.items():
            for stage, kl in (("raw", 0.0), ("replicated", rep.kl_raw_replicated), ("processed", rep.kl_raw_processed)):
                s = getattr(rep, stage)
                rows.append(f"{name}\t{stage}\t{s.count}\t{s.min!r}\t{s.max!r}\t{s.mean!r}\t{s.std!r}\t{kl!r}")
        return "\n".join(rows) + "\n"

    def to_human(self) -> str:
        lines = []
        for name, rep in self.modalities.items():
            lines.append(f"{name}: {rep.n_original} -> {rep.n_replicated} samples")
            for stage in ("raw", "replicated", "processed"):
                s = getattr(rep, stage)
                lines.append(f"  {stage:<10} n={s.count:<10d} range [{s.min:.4f}, {s.max:.4f}] "
                             f"mean {s.mean:.4f} std {s.std:.4f}")
            lines.append(f"  KL(raw||replicated) = {rep.kl_raw_replicated:.4f}")
            lines.append(f"  KL(raw||processed)  = {rep.kl_raw_processed:.4f}")
        return "\n".join(lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ReplicationReport":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def replication_report(original: Dict[str, Stream], replicated: Dict[str, Stream], processed: Dict[str, Stream],
                       counts: Dict[str, tuple] | None = None, bins: int = DEFAULT_BINS) -> ReplicationReport:
    """Summaries plus D(raw||replicated) and D(raw||processed) per modality.

    Streams are passed as zero-argument callables or re-iterable objects
    because each is traversed more than once.
    """
    rep = ReplicationReport(bins=bins)
    for name in original:
        o, r, p = (_replayable(s[name]) for s in (original, replicated, processed))
        n0, n1 = (counts or {}).get(name, (0, 0))
        rep.modalities[name] = ModalityReport(
            summarize(o()), summarize(r()), summarize(p()),
            _kl(o, r, bins), _kl(o, p, bins), n0, n1)
    return rep


def _replayable(s):
    if callable(s):
        return s
    return lambda: s


def _kl(a, b, bins):
    rng = joint_range(a(), b())
    return kl_divergence(histogram(a(), bins, rng), histogram(b(), bins, rng))
