"""Rotation-robustness benchmark on synthetic gestures.

Train without rotation, test on held-out recordings under Haar-random
rotations, and compare raw Cartesian input against raw + magnitude-LSHR
and the random-channel ablation.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence

import numpy as np

from .classifier import ArchConfig, TrainConfig, evaluate, init_model, train
from .features import EmbedConfig, assemble
from .synth import default_specs, generate, rotate_each, split

log = logging.getLogger(__name__)

VARIANTS = {
    "raw": EmbedConfig(mode="none", center=True),
    "lshr_mag": EmbedConfig(mode="lshr", fmt="magnitude", center=True),
    "random_baseline": EmbedConfig(mode="random_baseline", fmt="magnitude", center=True),
}


@dataclass(frozen=True)
class BenchConfig:
    n_per_class: int = 200
    frames: int = 32
    seeds: tuple = (0, 1, 2)
    test_rotation: str = "so3_uniform"
    train: TrainConfig = TrainConfig(epochs=20, warmup_epochs=5, lr_decay_epochs=(14, 18), batch_size=25)
    widths: tuple = (16, 16, 32, 32)
    strides: tuple = (1, 1, 2, 2)
    kernel: int = 5


def run_seed(seed: int, cfg: BenchConfig, variants: Sequence[str] = tuple(VARIANTS)) -> Dict[str, dict]:
    """Accuracies for one seed: {variant: {"clean": acc, "rotated": acc}}."""
    rng = np.random.default_rng(seed)
    specs = default_specs()
    data = generate(specs, cfg.n_per_class, cfg.frames, rng)
    train_seqs, test_seqs = split(data, 0.5, rng)
    rotated = rotate_each(test_seqs, cfg.test_rotation, rng)
    out = {}
    for name in variants:
        ecfg = replace(VARIANTS[name], frames=cfg.frames)
        feat_rng = np.random.default_rng([seed, 1])
        tr = assemble(train_seqs, ecfg, feat_rng)
        te = assemble(test_seqs, ecfg, feat_rng)
        te_rot = assemble(rotated, ecfg, feat_rng)
        arch = ArchConfig(tr.data.shape[2], len(specs), tr.data.shape[4],
                          widths=cfg.widths, strides=cfg.strides, kernel=cfg.kernel)
        model = init_model(arch, np.random.default_rng([seed, 2]))
        start = time.perf_counter()
        train(model, tr, None, replace(cfg.train, seed=seed))
        out[name] = {
            "clean": evaluate(model, te)["accuracy"],
            "rotated": evaluate(model, te_rot)["accuracy"],
            "seconds": time.perf_counter() - start,
        }
        log.info("seed %d %s clean=%.3f rotated=%.3f (%.1fs)", seed, name,
                 out[name]["clean"], out[name]["rotated"], out[name]["seconds"])
    return out


def run_benchmark(cfg: BenchConfig = BenchConfig(), variants: Sequence[str] = tuple(VARIANTS)) -> dict:
    per_seed: List[Dict[str, dict]] = [run_seed(s, cfg, variants) for s in cfg.seeds]
    summary = {}
    for name in variants:
        summary[name] = {
            "clean": float(np.mean([r[name]["clean"] for r in per_seed])),
            "rotated": float(np.mean([r[name]["rotated"] for r in per_seed])),
        }
    return {"per_seed": per_seed, "mean": summary}
