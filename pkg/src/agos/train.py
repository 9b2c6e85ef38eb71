"""Adam, the step learning-rate schedule, training/evaluation loops and checkpoints."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import DatasetManifest, decode_agt, encode_agt, split_dataset
from .mbmir import predict
from .model import compute_loss, forward, init_params
from .params import ModelParams
from .tensor import NonFiniteError, Tape, parameter

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """lr0 * factor ** floor(epoch / every); halves every 30 epochs by default."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.lr0 * config.lr_decay_factor ** (epoch // config.lr_decay_every)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({n: np.zeros_like(t.data) for n, t in params.items()},
                   {n: np.zeros_like(t.data) for n, t in params.items()})


def adam_step(params: ModelParams, state: AdamState, lr: float, config: TrainConfig,
              coupled_decay: bool = False) -> None:
    """One bias-corrected Adam update using each parameter's ``.grad``.

    Weight decay normally lives in the loss; ``coupled_decay`` instead adds
    ``2 * weight_decay * w`` to weight gradients before the moment update.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if coupled_decay and name.endswith(".w"):
            g = g + 2.0 * config.weight_decay * p.data
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        update = (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
        p.data = p.data - update


@dataclass
class Metrics:
    overall_accuracy: float = float("nan")
    per_class_accuracy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: list[dict[str, float]] = field(default_factory=list)
    runs: list[float] = field(default_factory=list)

    @property
    def oa_mean(self) -> float:
        return float(np.mean(self.runs)) if self.runs else self.overall_accuracy

    @property
    def oa_std(self) -> float:
        # population std over runs
        return float(np.std(self.runs)) if self.runs else 0.0

    def summary(self) -> str:
        return f"{100 * self.oa_mean:.2f}±{100 * self.oa_std:.2f}"


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(manifest: DatasetManifest, config: TrainConfig, out_dir=None, resume=None,
          params: ModelParams | None = None) -> tuple[ModelParams, Metrics]:
    """Full training loop; returns final parameters and per-epoch loss history.

    Shuffling and dropout draw from generators keyed on (seed, epoch, batch),
    so resuming from a checkpoint replays exactly what an uninterrupted run does.
    """
    if len(manifest) == 0:
        raise TrainingError("empty training set")
    if manifest.num_classes != config.classes:
        raise TrainingError(f"dataset has {manifest.num_classes} classes, config expects {config.classes}")
    x, y = manifest.arrays(config.dtype)
    start_epoch = 0
    history: list[dict[str, float]] = []
    if resume is not None:
        ck = load_checkpoint(resume)
        params, state, start_epoch, history = ck.params, ck.adam, ck.epoch, ck.history
    else:
        params = params if params is not None else init_params(config, x.shape[3])
        state = AdamState.zeros_like(params)
    n = len(y)
    for epoch in range(start_epoch, config.epochs):
        lr = lr_schedule(epoch, config)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        sums = {"cls": 0.0, "sealig": 0.0, "l2": 0.0, "total": 0.0}
        for b, idx in enumerate(_batches(n, config.batch_size, order)):
            drop_rng = np.random.default_rng([config.seed, epoch, b, 7])
            params.zero_grad()
            try:
                with Tape() as tape:
                    lb, _ = compute_loss(params, x[idx], y[idx], config, training=True, rng=drop_rng)
                if not math.isfinite(lb.total):
                    raise NonFiniteError("loss is not finite")
                tape.backward(lb.tensor, params.values())
            except NonFiniteError as exc:
                raise TrainingError(f"numeric failure at epoch {epoch}, batch {b}: {exc}") from exc
            adam_step(params, state, lr, config)
            for k, v in lb.as_row().items():
                sums[k] += v * len(idx)
        row = {k: v / n for k, v in sums.items()}
        row.update(epoch=epoch, lr=lr)
        history.append(row)
        log.info("epoch %d lr %.3g loss %.5f (cls %.5f sealig %.5f l2 %.5f)",
                 epoch, lr, row["total"], row["cls"], row["sealig"], row["l2"])
        done = epoch + 1
        if out_dir is not None and (done == config.epochs or
                                    (config.checkpoint_every and done % config.checkpoint_every == 0)):
            save_checkpoint(Path(out_dir) / f"epoch{done:04d}", params, config, state, done, history, manifest.classes)
            if done == config.epochs:
                save_checkpoint(Path(out_dir) / "final", params, config, state, done, history, manifest.classes)
    return params, Metrics(history=history)


def model_outputs(params: ModelParams, manifest: DatasetManifest, config: TrainConfig, batch_size: int = 64):
    """Eval-mode outputs: fused probs (N x C), grain scores (N x G x C) or None, diff probs or None."""
    x, _ = manifest.arrays(config.dtype)
    fused, grains, diffs = [], [], []
    for start in range(0, len(x), batch_size):
        out = forward(params, x[start : start + batch_size], config, training=False)
        fused.append(out.fused.numpy())
        if out.grain_scores:
            grains.append(np.stack([s.data for s in out.grain_scores], axis=1))
        if out.y_d is not None:
            diffs.append(out.y_d.numpy())
    cat = lambda parts: np.concatenate(parts) if parts else None  # noqa: E731
    return cat(fused), cat(grains), cat(diffs)


def accuracy(pred: np.ndarray, labels: np.ndarray, num_classes: int) -> tuple[float, np.ndarray]:
    correct = pred == labels
    per_class = np.array([correct[labels == c].mean() if np.any(labels == c) else float("nan")
                          for c in range(num_classes)])
    return int(correct.sum()) / len(labels), per_class


def evaluate(params: ModelParams, manifest: DatasetManifest, config: TrainConfig) -> Metrics:
    if manifest.num_classes != config.classes:
        raise ValueError(f"model predicts {config.classes} classes, dataset has {manifest.num_classes}")
    fused, _, _ = model_outputs(params, manifest, config)
    if fused.shape[1] != manifest.num_classes:
        raise ValueError("parameter class count does not match dataset")
    oa, per_class = accuracy(predict(fused), manifest.labels(), manifest.num_classes)
    return Metrics(oa, per_class)


def run_repeated(manifest: DatasetManifest, config: TrainConfig, train_ratio: float, seeds=None,
                 on_run=None) -> Metrics:
    """Train + evaluate ``config.runs`` times; run i uses seed ``config.seed + i`` for split and init."""
    seeds = [config.seed + i for i in range(config.runs)] if seeds is None else list(seeds)
    oas, per_class = [], []
    for s in seeds:
        cfg = config.replace(seed=s)
        tr, te = split_dataset(manifest, train_ratio, s)
        params, _ = train(tr, cfg)
        m = evaluate(params, te, cfg)
        oas.append(m.overall_accuracy)
        per_class.append(m.per_class_accuracy)
        if on_run is not None:
            on_run(cfg, params, tr, te, m)
    return Metrics(float(np.mean(oas)), np.mean(per_class, axis=0), runs=oas)


# -------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    adam: AdamState
    epoch: int
    history: list[dict[str, float]]
    classes: list[str]


def save_checkpoint(path, params: ModelParams, config: TrainConfig, state: AdamState | None = None,
                    epoch: int = 0, history=(), classes=()) -> Path:
    """Directory with ``tensors.agt`` (concatenated AGT1 records), ``index.txt``,
    ``config.txt`` (key = value snapshot) and ``state.txt``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    state = state or AdamState.zeros_like(params)
    blobs, index, offset = [], [], 0
    entries = [(n, t.data) for n, t in params.items()]
    entries += [(f"adam.m.{n}", a) for n, a in state.m.items()]
    entries += [(f"adam.v.{n}", a) for n, a in state.v.items()]
    for name, arr in entries:
        blob = encode_agt(arr)
        index.append(f"{name} {offset} {'x'.join(map(str, arr.shape)) or 'scalar'}")
        blobs.append(blob)
        offset += len(blob)
    (path / "tensors.agt").write_bytes(b"".join(blobs))
    (path / "index.txt").write_text("\n".join(index) + "\n", encoding="utf-8")
    config.save(path / "config.txt")
    lines = [f"epoch = {epoch}", f"adam_step = {state.step}", f"classes = {','.join(classes)}"]
    (path / "state.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if history:
        keys = list(history[0])
        rows = [",".join(keys)] + [",".join(repr(float(h[k])) for k in keys) for h in history]
        (path / "history.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    config = TrainConfig.load(path / "config.txt")
    buf = (path / "tensors.agt").read_bytes()
    params, state = ModelParams(), AdamState()
    for line in (path / "index.txt").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, offset, _ = line.split()
        arr, _ = decode_agt(buf, int(offset))
        if name.startswith("adam.m."):
            state.m[name[7:]] = arr
        elif name.startswith("adam.v."):
            state.v[name[7:]] = arr
        else:
            params[name] = parameter(arr, name)
    meta = {}
    for line in (path / "state.txt").read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            meta[k] = v
    state.step = int(meta.get("adam_step", 0))
    history = []
    hist_file = path / "history.csv"
    if hist_file.exists():
        rows = hist_file.read_text(encoding="utf-8").split()
        keys = rows[0].split(",")
        for r in rows[1:]:
            vals = [float(v) for v in r.split(",")]
            h = dict(zip(keys, vals))
            h["epoch"] = int(h["epoch"])
            history.append(h)
    classes = [c for c in meta.get("classes", "").split(",") if c]
    return Checkpoint(params, config, state, int(meta.get("epoch", 0)), history, classes)
