"""Acceptance criteria, one test per criterion, each reporting a PASS/FAIL line."""
import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from skyfuse import MODALITIES
from skyfuse.cli import main
from skyfuse.features import SpectrogramConfig, stft_magnitude
from skyfuse.metrics import ConfusionMatrix, macro_metrics
from skyfuse.model import ModelConfig, count_instantiated, forward, init_params, load_checkpoint, param_count
from skyfuse.model import cast_params
from skyfuse.pipeline import (SplitSpec, cyclic_replicate, fuse, load_split, run_pipeline, stratified_split,
                              synth_dataset)
from skyfuse.pipeline.transforms import Dataset
from skyfuse.profiling import REFERENCE_FPS, REFERENCE_GFLOPS, REFERENCE_PARAMS_M, benchmark_fps, estimate_flops
from skyfuse.rng import numpy_rng
from skyfuse.stats import histogram, joint_range, kl_divergence
from skyfuse.tensorkit import Tensor, grad_check
from skyfuse.training import (AdamState, EarlyStopState, OptimizerConfig, SchedulerState, adamw_step, cross_entropy,
                              early_stop_step, evaluate, plateau_step, read_history)

# setting used for the learnability and determinism runs
CHAIN_CONFIG = {
    "seed": 0,
    "per_class": 8,
    "replication_target": 40,
    "model": "tiny",
    "optimizer": {"learning_rate": 0.005},
    "batch_size": 16,
    "epochs": 100,
    "max_steps": 200,
}


def digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def chain_runs(tmp_path_factory):
    """Two independent `skyfuse run` invocations from the same config file."""
    root = tmp_path_factory.mktemp("acceptance")
    cfg = root / "run.json"
    cfg.write_text(json.dumps(CHAIN_CONFIG))
    outs, seconds = [], []
    for name in ("first", "second"):
        t0 = time.perf_counter()
        assert main(["run", "--config", str(cfg), "--out", str(root / name)]) == 0
        seconds.append(time.perf_counter() - t0)
        outs.append(root / name)
    return outs, seconds


def test_criterion_01_metrics_oracle(criterion):
    cm = ConfusionMatrix([[20, 0, 0, 0, 0], [0, 16, 0, 0, 0], [1, 0, 34, 0, 0], [0, 0, 0, 55, 2], [0, 0, 0, 0, 32]])
    want = {"accuracy": 0.9812, "recall": 0.9873, "precision": 0.9787, "f1": 0.9826, "specificity": 0.9954}
    got = {k: round(v, 4) for k, v in macro_metrics(cm).items()}
    criterion(1, "metrics oracle reproduces reference table at 4 d.p.", got == want and cm.total == 160,
              " ".join(f"{k}={v:.4f}" for k, v in got.items()))


def test_criterion_02_gradient_correctness(criterion):
    cfg = ModelConfig(feature_dim=4, target_seq_len=6, d_model=8, num_heads=2, num_layers=1, dim_feedforward=16,
                      dropout=0.2, num_classes=3, head_hidden=8)
    params = cast_params(init_params(cfg, 0), np.float64)
    names = list(params)
    x = numpy_rng(1).standard_normal((4, 6, 4))
    labels = np.array([0, 1, 2, 1])

    def loss(*arrays):
        return cross_entropy(forward(x, dict(zip(names, arrays)), cfg), labels)

    rep = grad_check(loss, [params[k] for k in names], h=1e-4, tol=1e-4)
    n = sum(params[k].size for k in names)
    criterion(2, "full-model grad_check max relative error <= 1e-4", rep.max_rel_error <= 1e-4,
              f"max rel error {rep.max_rel_error:.3e} over {n} parameters")


def test_criterion_03_learnability(chain_runs, criterion):
    outs, seconds = chain_runs
    run = outs[0]
    params, cfg = load_checkpoint(run / "model")
    train_acc = macro_metrics(evaluate(params, load_split(run / "processed", "train"), cfg))["accuracy"]
    val_acc = macro_metrics(evaluate(params, load_split(run / "processed", "val"), cfg))["accuracy"]
    history = read_history(run / "model" / "history.tsv")
    steps_ok = json.loads((run / "model" / "run_config.json").read_text())["max_steps"] <= 200
    ok = train_acc >= 0.95 and val_acc >= 0.80 and steps_ok and cfg.d_model == 16
    criterion(3, "synth -> preprocess -> train reaches train acc >= 0.95 and val acc >= 0.80", ok,
              f"train {train_acc:.4f}, val {val_acc:.4f}, {len(history)} epochs, <=200 steps, "
              f"chain {seconds[0]:.0f}s")


def test_criterion_04_replication_fidelity(criterion):
    radar = [r.payload for r in synth_dataset(per_class=12, seed=3)["radar"]]

    def kl_and_hists(orig, rep):
        rng = joint_range(iter(orig), iter(rep))
        a, b = histogram(iter(orig), 100, rng), histogram(iter(rep), 100, rng)
        return kl_divergence(a, b), a, b

    exact = []
    for n, t in ((40, 200), (20, 60), (58, 58)):
        kl, a, b = kl_and_hists(radar[:n], cyclic_replicate(radar[:n], t))
        exact.append(kl == 0.0 and np.array_equal(a.probabilities, b.probabilities))
    kl58, _, _ = kl_and_hists(radar[:58], cyclic_replicate(radar[:58], 200))
    criterion(4, "KL(raw||replicated) == 0 exactly for T multiple of N; <= 0.05 for 58 -> 200",
              all(exact) and kl58 <= 0.05, f"exact cases {exact}, KL(58->200) = {kl58:.6f}")


def test_criterion_05_normalization(criterion):
    res = run_pipeline(synth_dataset(per_class=4, seed=1), target=20, split=SplitSpec(seed=1))
    ds = res.dataset
    worst_mean, worst_std = 0.0, 0.0
    for m in range(len(MODALITIES)):
        block = ds.x[ds.modality == m].astype(np.float64)
        worst_mean = max(worst_mean, abs(block.mean()))
        worst_std = max(worst_std, abs(block.std() - 1.0))
    criterion(5, "post z-score |mean| <= 1e-5 and |std-1| <= 1e-3 per modality",
              worst_mean <= 1e-5 and worst_std <= 1e-3, f"max |mean| {worst_mean:.2e}, max |std-1| {worst_std:.2e}")


def test_criterion_06_shapes_and_split(criterion, tmp_path):
    per_modality = [25, 20, 44, 71, 40]  # x4 modalities gives the reference class totals
    labels = np.repeat(np.arange(5), per_modality)
    sets = [(np.zeros((200, 1000, 128), np.float32), labels) for _ in MODALITIES]
    ds = fuse(sets)
    shape_ok = ds.x.shape == (800, 1000, 128)
    del sets
    parts = stratified_split(Dataset(np.zeros((800, 1, 1), np.float32), ds.y), SplitSpec())
    del ds
    sizes = [len(p) for p in parts]
    table = [p.class_counts().tolist() for p in parts]
    want = [[55, 44, 97, 156, 88], [25, 20, 44, 71, 40], [20, 16, 35, 57, 32]]
    small = run_pipeline(synth_dataset(per_class=1, seed=0), target=5, split=SplitSpec())
    small_ok = small.dataset.x.shape == (20, 1000, 128) and [len(p) for p in small.splits] == [11, 5, 4]
    ok = shape_ok and sizes == [440, 200, 160] and table == want and small_ok
    criterion(6, "T=200 fuses to (800,1000,128), splits 440/200/160 per class; T=5 gives (20,1000,128)", ok,
              f"sizes {sizes}, per-class {table}, T=5 {small.dataset.x.shape} split "
              f"{[len(p) for p in small.splits]}")


def test_criterion_07_scheduler_and_early_stop(criterion):
    s = plateau_step(SchedulerState(lr=1e-4), 0.8)
    for _ in range(6):
        s = plateau_step(s, 0.8)
    lr_ok = s.lr == 5e-5

    stop = EarlyStopState(patience=20)
    accs = [0.3, 0.6, 0.7] + [0.7] * 40
    stopped_at = None
    for epoch, acc in enumerate(accs, 1):
        params = {"w.weight": Tensor(np.full(3, float(epoch)))}
        stop, halt = early_stop_step(stop, acc, params, epoch)
        if halt:
            stopped_at = epoch
            break
    stop_ok = stopped_at == stop.best_epoch + 20 and stop.best_epoch == 3
    snap_ok = (stop.snapshot["w.weight"] == 3.0).all()
    criterion(7, "6 flat epochs halve lr; stop at best_epoch + patience; best snapshot returned",
              lr_ok and stop_ok and snap_ok, f"lr {s.lr:g}, best epoch {stop.best_epoch}, stopped at {stopped_at}")


def test_criterion_08_profiling(criterion):
    r = np.random.default_rng(8)
    counts_ok = True
    for _ in range(20):
        h = int(r.integers(1, 5))
        cfg = ModelConfig(feature_dim=int(r.integers(1, 64)), d_model=2 * h * int(r.integers(1, 5)), num_heads=h,
                          num_layers=int(r.integers(0, 4)), dim_feedforward=int(r.integers(1, 64)),
                          num_classes=int(r.integers(1, 10)), head_hidden=int(r.integers(0, 32)))
        counts_ok &= param_count(cfg) == count_instantiated(init_params(cfg, 0))
    base = ModelConfig()

    def increasing(field, values):
        f = [estimate_flops(ModelConfig(**{**base.__dict__, field: v})) for v in values]
        return all(b > a for a, b in zip(f, f[1:]))

    heads = [estimate_flops(ModelConfig(**{**base.__dict__, "num_heads": v})) for v in (1, 2, 4, 8)]
    mono = increasing("num_layers", [0, 1, 2, 3]) and increasing("d_model", [64, 128, 256]) and \
        increasing("dim_feedforward", [256, 512, 1024]) and all(b >= a for a, b in zip(heads, heads[1:]))
    small = ModelConfig(d_model=16, num_heads=2, num_layers=1, dim_feedforward=32, head_hidden=32)
    tp = benchmark_fps(init_params(small, 0), small, batch=1, warmup=1, iters=3, repeats=3)
    ok = counts_ok and mono and tp.fps > 0 and tp.cv >= 0
    criterion(8, "param_count closed form exact on 20 configs; FLOPs monotone; fps > 0 with cv", ok,
              f"default config {param_count(base):,} params (reference {REFERENCE_PARAMS_M} M), "
              f"{estimate_flops(base) / 1e9:.2f} GFLOPs (reference {REFERENCE_GFLOPS}), small-model "
              f"{tp.fps:.1f} FPS cv {tp.cv:.3f} (reference {REFERENCE_FPS} FPS, different hardware and model)")


def test_criterion_09_determinism(chain_runs, criterion):
    (a, b), seconds = chain_runs
    parts = {"checkpoint": "model", "report": "processed", "evaluation": "eval"}
    same = {}
    for label, sub in parts.items():
        da, db = digest(a / sub), digest(b / sub)
        # run_config.json records the output path, which differs between the two runs by design
        da = {k: v for k, v in da.items() if not k.endswith("run_config.json")}
        db = {k: v for k, v in db.items() if not k.endswith("run_config.json")}
        same[label] = da == db and len(da) > 0
    history_same = (a / "model" / "history.tsv").read_bytes() == (b / "model" / "history.tsv").read_bytes()
    report_same = (a / "processed" / "replication_report.ini").read_bytes() == \
        (b / "processed" / "replication_report.ini").read_bytes()
    ok = all(same.values()) and history_same and report_same
    criterion(9, "two CLI chain runs from one RunConfig are bitwise identical", ok,
              f"{same}, history {history_same}, report {report_same}, runs {seconds[0]:.0f}s + {seconds[1]:.0f}s")


def test_criterion_10_numeric_kernels(criterion):
    rng = np.random.default_rng(10)
    worst = 0.0
    for n_fft in (16, 256, 1000, 4096):
        sig = rng.normal(size=n_fft + n_fft // 2)
        fast = stft_magnitude(sig, SpectrogramConfig(n_fft=n_fft, hop=n_fft // 2, n_mels=8))
        n = np.arange(n_fft)
        win = 0.5 - 0.5 * np.cos(2 * np.pi * n / n_fft)
        basis = np.exp(-2j * np.pi * np.arange(n_fft // 2 + 1)[:, None] * n / n_fft)
        slow = np.stack([np.abs(basis @ (sig[s:s + n_fft] * win)) for s in range(0, sig.size - n_fft + 1, n_fft // 2)])
        worst = max(worst, float(np.max(np.abs(fast - slow)) / np.max(slow)))
    ce = float(cross_entropy(Tensor(np.zeros((4, 5)), dtype=np.float64), [0, 1, 2, 3]).data)
    p = histogram(np.array([0.25, 0.75]), bins=2, range=(0, 1))
    q = histogram(np.array([0.25, 0.75, 0.75, 0.75]), bins=2, range=(0, 1))
    kl = kl_divergence(p, q)
    kl_oracle = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
    opt = OptimizerConfig()
    a1, _ = adamw_step({"w.weight": np.array([1.0])}, {"w.weight": np.array([0.0])}, AdamState(), opt, 1)
    a2, _ = adamw_step({"w.weight": np.array([0.0])}, {"w.weight": np.array([1.0])}, AdamState(),
                       OptimizerConfig(weight_decay=0.0), 1)
    adam_err = max(abs(a1["w.weight"][0] - 0.999999), abs(a2["w.weight"][0] - (-1e-4 / (1 + 1e-8))))
    ok = worst <= 1e-3 and abs(ce - math.log(5)) <= 1e-12 and abs(kl - kl_oracle) <= 1e-6 and \
        abs(round(kl, 4) - 0.1438) < 1e-12 and adam_err <= 1e-9
    criterion(10, "STFT vs direct DFT, CE = ln 5, KL hand case, AdamW single step", ok,
              f"STFT rel err {worst:.2e}, CE {ce:.6f}, KL {kl:.6f}, AdamW err {adam_err:.1e}")
