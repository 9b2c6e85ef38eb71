"""Ablation, sensitivity, fusion and gradient-check experiments with CSV reports."""
from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig, tiny_config
from .data import DatasetManifest, SyntheticSceneSpec, export_heatmap, scan_dataset, synth_generate
from .mbmir import predict
from .mil import FusionStrategy, STRATEGIES, covariance_matrix, fit_least_squares, fuse, write_matrix_csv
from .model import compute_loss, forward, init_params
from .tensor import Tape, finite_diff_grad
from .train import accuracy, model_outputs, run_repeated

log = logging.getLogger(__name__)

KINDS = ("ablate", "sweep-grains", "sweep-alpha", "ddc-variants", "fusion-compare", "covariance")
GRAIN_GRID = (0, 1, 2, 3, 4, 5)
ALPHA_GRID = (5e-2, 5e-3, 5e-4, 5e-5)


def dataset_for(config: TrainConfig) -> DatasetManifest:
    if config.data_root:
        return scan_dataset(config.data_root)
    manifest, _ = synth_generate(SyntheticSceneSpec.from_train(config), config.synth_seed)
    return manifest


def variants(kind: str, config: TrainConfig) -> list[tuple[str, TrainConfig]]:
    if kind == "ablate":
        return [
            ("backbone", config.replace(variant="backbone")),
            ("backbone+mgp", config.replace(variant="mgp")),
            ("backbone+mgp+mbmir", config.replace(variant="full", enable_sealig=False)),
            ("backbone+mgp+ssf", config.replace(variant="mgp_ssf", enable_sealig=True)),
            ("backbone+mgp+mbmir+lcls", config.replace(variant="full", enable_sealig=False)),
            ("full", config.replace(variant="full", enable_sealig=True)),
        ]
    if kind == "sweep-grains":
        return [(f"T={t}", config.replace(variant="full", grains=t)) for t in GRAIN_GRID]
    if kind == "sweep-alpha":
        return [(f"alpha={a:g}", config.replace(variant="full", alpha=a, enable_sealig=True)) for a in ALPHA_GRID]
    if kind == "ddc-variants":
        return [
            ("C", config.replace(variant="full", dilated=False, differential=False)),
            ("DD#C", config.replace(variant="full", dilated=False, differential=True)),
            ("D#DC", config.replace(variant="full", dilated=True, differential=False)),
            ("DDC", config.replace(variant="full", dilated=True, differential=True)),
        ]
    raise ValueError(f"unknown experiment kind {kind!r}")


# ----------------------------------------------------------------- reports

def report_columns(ratios) -> list[str]:
    cols = ["variant"]
    for r in ratios:
        cols += [f"oa_mean@{r:g}", f"oa_std@{r:g}"]
    return cols + ["runtime_s"]


def write_report(path, rows: list[dict], ratios) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = report_columns(ratios)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([row["variant"]] + [f"{row[c]:.9g}" for c in cols[1:]])
    return path


def read_report(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (v if k == "variant" else float(v)) for k, v in r.items()} for r in rows]


# ------------------------------------------------------------- experiments

def _fusion_runs(manifest: DatasetManifest, config: TrainConfig, ratio: float):
    """Train the full model per run and score every fusion strategy on its grain outputs.

    Returns ({strategy: [oa per run]}, {strategy: test distributions of the first run}).
    """
    cfg = config.replace(variant="full", enable_sealig=True)
    if cfg.grains < 1:
        raise ValueError("fusion comparison needs at least one grain beyond the base")
    oas = {s: [] for s in (*STRATEGIES, "agos")}
    dists: dict[str, np.ndarray] = {}

    def on_run(run_cfg, params, tr, te, metrics):
        _, train_grains, _ = model_outputs(params, tr, run_cfg)
        fused, test_grains, _ = model_outputs(params, te, run_cfg)
        labels = te.labels()
        per_grain = list(test_grains.transpose(1, 0, 2))
        weights = fit_least_squares(train_grains, tr.labels())
        for kind in STRATEGIES:
            strat = FusionStrategy(kind, weights if kind == "least-squares" else None)
            probs = fuse(per_grain, strat)
            oas[kind].append(accuracy(predict(probs), labels, te.num_classes)[0])
            dists.setdefault(kind, probs)
        oas["agos"].append(metrics.overall_accuracy)
        dists.setdefault("agos", fused)

    run_repeated(manifest, cfg, ratio, on_run=on_run)
    return oas, dists


def run_experiment(kind: str, config: TrainConfig, out_dir, manifest: DatasetManifest | None = None) -> Path:
    """Run one experiment family and write ``<out_dir>/<kind>.csv``.

    Each row reports mean and population std of test OA over ``config.runs``
    seeded runs for every configured train ratio, plus wall-clock seconds.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = manifest if manifest is not None else dataset_for(config)
    ratios = config.train_ratios
    rows: list[dict] = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        if kind in ("fusion-compare", "covariance"):
            names = (*STRATEGIES, "agos")
            rows = [{"variant": n, "runtime_s": 0.0} for n in names]
            for r in ratios:
                t0 = time.perf_counter()
                oas, dists = _fusion_runs(manifest, config, r)
                elapsed = time.perf_counter() - t0
                for row in rows:
                    row[f"oa_mean@{r:g}"] = float(np.mean(oas[row["variant"]]))
                    row[f"oa_std@{r:g}"] = float(np.std(oas[row["variant"]]))
                    row["runtime_s"] += elapsed
                if kind == "covariance":
                    for name, probs in dists.items():
                        write_matrix_csv(out_dir / f"covariance_{name}@{r:g}.csv", covariance_matrix(probs))
        else:
            for name, cfg in variants(kind, config):
                row = {"variant": name, "runtime_s": 0.0}
                for r in ratios:
                    t0 = time.perf_counter()
                    m = run_repeated(manifest, cfg, r)
                    row["runtime_s"] += time.perf_counter() - t0
                    row[f"oa_mean@{r:g}"] = m.oa_mean
                    row[f"oa_std@{r:g}"] = m.oa_std
                    log.info("%s %s ratio %g: OA %s", kind, name, r, m.summary())
                rows.append(row)
    return write_report(out_dir / f"{kind}.csv", rows, ratios)


# ---------------------------------------------------------------- gradcheck

@dataclass
class GradcheckReport:
    rows: list[tuple[str, float, int]]  # (parameter group, max relative error, entries)
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(e for _, e, _ in self.rows)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for _, e, _ in self.rows)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 2

    def format(self) -> str:
        lines = [f"{'group':<24} {'entries':>8} {'max rel err':>12}"]
        lines += [f"{n:<24} {k:>8d} {e:>12.3e}" for n, e, k in self.rows]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the group's largest gradient magnitude."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def gradcheck(config: TrainConfig | None = None, epsilon: float = 1e-5, tolerance: float = 1e-5,
              batch: int = 2) -> GradcheckReport:
    """Compare tape gradients of the total loss with central differences, per parameter group."""
    config = (config or tiny_config()).replace(precision="double", dropout=0.0)
    rng = np.random.default_rng(config.seed)
    x = rng.random((batch, config.image_size, config.image_size, config.image_channels))
    y = rng.integers(0, config.classes, size=batch)
    params = init_params(config, config.image_channels)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        with Tape() as tape:
            lb, _ = compute_loss(params, x, y, config)
        tape.backward(lb.tensor, params.values())
        rows = []
        for name, p in params.items():
            numeric = finite_diff_grad(lambda: compute_loss(params, x, y, config)[0].total, p, epsilon)
            rows.append((name, relative_error(p.grad, numeric), p.data.size))
    return GradcheckReport(rows, tolerance)


# ------------------------------------------------------------------ heatmaps

def export_heatmaps(params, manifest: DatasetManifest, config: TrainConfig, out_dir,
                    class_index: int = -1, limit: int | None = None) -> list[Path]:
    """Write one PGM per sample and grain: ``<out_dir>/<i>_<class>_grain<t>.pgm``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    count = len(manifest) if limit is None else min(limit, len(manifest))
    for i in range(count):
        out = forward(params, manifest.image(i)[None].astype(config.dtype), config, training=False)
        for inst in out.instances:
            path = out_dir / f"{i:05d}_{manifest.classes[manifest.samples[i][1]]}_grain{inst.grain}.pgm"
            export_heatmap(inst, class_index, path)
            written.append(path)
    return written
