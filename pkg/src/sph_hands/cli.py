"""``sph-hands`` command-line entry point.

Every subcommand writes a run manifest (``key = value`` text) recording the
argv, resolved config, seed, tool version, input/output paths and wall
time. Exit codes: 0 success, 1 validation or property failure, 2 usage.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import shlex
import sys
import time
from importlib import metadata
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import config as kv
from .classifier import (
    ArchConfig,
    TrainConfig,
    ensemble,
    evaluate,
    gradient_check,
    init_model,
    load_checkpoint,
    predict_scores,
    save_checkpoint,
    train,
)
from .features import EmbedConfig, FeatureTensor, assemble, ntu_hand_set, read_hand_set, rotation_augmenter
from .geometry import sample_rotation, rotate, to_local
from .harmonics import lsht_transform, power_spectrum, sph_harm
from .skeleton_io import ContainerError, ParseError, SkeletonSequence, parse_fpha, parse_ntu, read_tensor, write_tensor
from .synth import default_specs, generate, load_dataset, load_specs, save_dataset

log = logging.getLogger("sph_hands")

PROPERTIES = ("orthonormality", "azimuthal", "so3-spectrum")
DEFAULT_TOL = {"orthonormality": 1e-9, "azimuthal": 1e-12, "so3-spectrum": 1e-8}


class Failure(Exception):
    """Validation or property failure: exit code 1."""


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


class RunManifest:
    def __init__(self, command: str, argv: Sequence[str]):
        self.command = command
        self.argv = list(argv)
        self.config: Dict[str, object] = {}
        self.seed: Optional[int] = None
        self.inputs: List[str] = []
        self.outputs: List[str] = []
        self.start = time.perf_counter()

    def write(self, path: str, status: int) -> None:
        values: Dict[str, object] = {
            "command": self.command,
            "argv": shlex.join(self.argv),
            "tool_version": tool_version(),
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "exit_status": status,
            "duration_s": f"{time.perf_counter() - self.start:.3f}",
        }
        values.update({f"config.{k}": v for k, v in self.config.items()})
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(kv.dump_kv(values))


# ---------------------------------------------------------------- file helpers

def _stem(path: str) -> str:
    return path[:-5] if path.endswith(".sktf") else path


def _write_lines(path: str, items) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(f"{x}\n" for x in items))


def _read_lines(path: str) -> List[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def save_features(ft: FeatureTensor, path: str) -> List[str]:
    base = _stem(path)
    write_tensor(ft.data, base + ".sktf")
    _write_lines(base + ".channels", ft.channel_map)
    _write_lines(base + ".labels", ft.labels.tolist())
    return [base + ".sktf", base + ".channels", base + ".labels"]


def load_features(path: str) -> FeatureTensor:
    base = _stem(path)
    data = read_tensor(base + ".sktf").astype(np.float64)
    channels = tuple(_read_lines(base + ".channels"))
    labels = np.array([int(x) for x in _read_lines(base + ".labels")], dtype=np.int64) \
        if os.path.exists(base + ".labels") else np.zeros(0, dtype=np.int64)
    return FeatureTensor(data, channels, labels)


def is_feature_file(path: str) -> bool:
    return os.path.exists(_stem(path) + ".channels")


def load_sequences(path: str) -> List[SkeletonSequence]:
    """A dataset (N, T, M, V, 3) with optional labels, or one (T, M, V, 3) recording."""
    base = _stem(path)
    arr = read_tensor(base + ".sktf")
    if arr.ndim == 4:
        return [SkeletonSequence(arr.astype(np.float64))]
    return load_dataset(base)


def _require(path: str) -> None:
    if not os.path.exists(path):
        raise Failure(f"no such file: {path}")


# ---------------------------------------------------------------- verification

def check_orthonormality(lmax: int = 2, n_theta: int = 32, n_phi: int = 64) -> float:
    """Max |G - I| of the Y_l^m Gram matrix under Gauss-Legendre x trapezoid quadrature."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(x)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(theta, phi, indexing="ij")
    weights = np.broadcast_to(w[:, None] * (2.0 * np.pi / n_phi), T.shape).ravel()
    idx = [(l, m) for l in range(lmax + 1) for m in range(-l, l + 1)]
    Y = np.stack([sph_harm(l, m, T, P).ravel() for l, m in idx])
    gram = (Y * weights) @ Y.conj().T
    return float(np.abs(gram - np.eye(len(idx))).max())


def check_azimuthal(samples: int = 10_000, seed: int = 0, lmax: int = 2) -> float:
    """Max | |Y(theta, phi + alpha)| - |Y(theta, phi)| | over random triples and all (l, m)."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, np.pi, samples)
    phi = rng.uniform(0.0, 2.0 * np.pi, samples)
    alpha = rng.uniform(0.0, 2.0 * np.pi, samples)
    shifted = np.mod(phi + alpha, 2.0 * np.pi)
    worst = 0.0
    for l in range(lmax + 1):
        for m in range(-l, l + 1):
            dev = np.abs(np.abs(sph_harm(l, m, theta, shifted)) - np.abs(sph_harm(l, m, theta, phi)))
            worst = max(worst, float(dev.max()))
    return worst


def check_so3_spectrum(rotations: int = 100, seed: int = 0, joints: int = 8, degrees=(1, 2)) -> float:
    """Max change of the per-degree LSHT power spectrum under Haar-random rotations of random hands."""
    rng = np.random.default_rng(seed)
    seq = SkeletonSequence(rng.normal(scale=0.05, size=(1, 1, joints, 3)))
    base = power_spectrum(lsht_transform(to_local(seq), degrees))
    worst = 0.0
    for _ in range(rotations):
        out = power_spectrum(lsht_transform(to_local(rotate(seq, sample_rotation(rng))), degrees))
        worst = max(worst, float(np.abs(out - base).max()))
    return worst


# ---------------------------------------------------------------- commands

def cmd_parse(args, man: RunManifest) -> int:
    _require(args.input)
    man.inputs.append(args.input)
    man.config.update(format=args.format, scale=args.scale)
    with open(args.input, "rb") as fh:
        raw = fh.read()
    try:
        seq = parse_fpha(raw, scale=args.scale) if args.format == "fpha" else parse_ntu(raw)
    except ParseError as exc:
        raise Failure(f"{args.input}: {exc}") from None
    out = _stem(args.output) + ".sktf"
    write_tensor(seq.coords, out)
    man.outputs.append(out)
    print(f"frames={seq.frames} bodies={seq.bodies} joints={seq.joints} output={out}")
    return 0


def _hand_set(spec: Optional[str], joints: int, man: RunManifest):
    if spec in (None, "all"):
        return None
    if spec == "ntu":
        return ntu_hand_set(n_joints=joints)
    _require(spec)
    man.inputs.append(spec)
    return read_hand_set(spec, joints)


def cmd_embed(args, man: RunManifest) -> int:
    path = _stem(args.input) + ".sktf"
    _require(path)
    man.inputs.append(path)
    seqs = load_sequences(path)
    cfg = EmbedConfig(mode=args.mode, fmt=args.format, degrees=kv.int_list(args.degrees),
                      hand_set=_hand_set(args.hand_set, seqs[0].joints, man), up_axis=args.up_axis,
                      frames=args.frames, bodies=args.bodies, modality=args.modality, center=args.center,
                      lsht_normalize=args.lsht_normalize)
    man.seed = args.seed
    man.config.update(cfg.to_kv())
    ft = assemble(seqs, cfg, np.random.default_rng(args.seed))
    if any(s.label is None for s in seqs):
        ft = FeatureTensor(ft.data, ft.channel_map)
    man.outputs.extend(save_features(ft, args.output))
    print(f"samples={len(ft)} shape={'x'.join(map(str, ft.data.shape))} output={_stem(args.output)}.sktf")
    return 0


def cmd_verify(args, man: RunManifest) -> int:
    tol = DEFAULT_TOL[args.property] if args.tol is None else args.tol
    man.seed = args.seed
    man.config.update(property=args.property, tol=tol)
    if args.property == "orthonormality":
        dev = check_orthonormality()
    elif args.property == "azimuthal":
        dev = check_azimuthal(args.samples or 10_000, args.seed)
    else:
        dev = check_so3_spectrum(args.samples or 100, args.seed)
    ok = dev < tol
    man.config["max_deviation"] = f"{dev:.3e}"
    print(f"property={args.property} max_deviation={dev:.3e} tol={tol:g} status={'pass' if ok else 'fail'}")
    print(f"max deviation {'<' if ok else '>='} {tol:g}")
    return 0 if ok else 1


def cmd_synth(args, man: RunManifest) -> int:
    extra: Dict[str, str] = {}
    if args.spec:
        _require(args.spec)
        man.inputs.append(args.spec)
        specs, extra = load_specs(args.spec)
    else:
        specs = default_specs()
    frames = args.frames or int(extra.get("frames", 32))
    man.seed = args.seed
    man.config.update(n=args.n, frames=frames, classes=",".join(s.family for s in specs),
                      rotation=args.rotation or "per-spec")
    for s in specs:
        man.config.update({f"{s.family}.{k}": v for k, v in vars(s).items() if k not in ("label", "family")})
    data = generate(specs, args.n, frames, np.random.default_rng(args.seed), rotation=args.rotation)
    man.outputs.extend(save_dataset(data, args.output))
    print(f"samples={len(data)} classes={len(specs)} frames={frames} output={_stem(args.output)}.sktf")
    return 0


def _split_config(cfg: Dict[str, str]):
    arch = {k: cfg[k] for k in ("widths", "strides", "kernel") if k in cfg}
    embed = {k[6:]: v for k, v in cfg.items() if k.startswith("embed.")}
    return arch, embed


def cmd_train(args, man: RunManifest) -> int:
    cfg = kv.read_kv(args.config) if args.config else {}
    if args.config:
        man.inputs.append(args.config)
    tcfg = TrainConfig.from_kv(cfg)
    arch_kv, embed_kv = _split_config(cfg)
    path = _stem(args.data) + ".sktf"
    _require(path)
    man.inputs.append(path)
    augment_mode = cfg.get("augment", "none")
    augment = None
    extra: Dict[str, object] = {}
    if is_feature_file(path):
        if augment_mode != "none":
            raise Failure("rotation augmentation needs raw sequences, not an embedded feature file")
        data = load_features(path)
    else:
        ecfg = EmbedConfig.from_kv(embed_kv)
        seqs = load_sequences(path)
        data = assemble(seqs, ecfg, np.random.default_rng([tcfg.seed, 1]))
        if augment_mode != "none":
            augment = rotation_augmenter(seqs, ecfg, augment_mode)
        extra.update({f"embed.{k}": ",".join(map(str, v)) if isinstance(v, tuple) else v
                      for k, v in ecfg.to_kv().items()})
    if data.labels.size == 0:
        raise Failure(f"{path}: training data has no labels")
    classes = int(cfg.get("num_classes", int(data.labels.max()) + 1))
    arch = ArchConfig.from_kv({"in_channels": data.data.shape[2], "num_classes": classes,
                               "num_joints": data.data.shape[4], **arch_kv})
    man.seed = tcfg.seed
    man.config.update({**tcfg.to_kv(), **arch.to_kv(), "augment": augment_mode})
    model = init_model(arch, np.random.default_rng([tcfg.seed, 2]))
    _, hist = train(model, data, None, tcfg, augment=augment)
    extra.update(seed=tcfg.seed, channels=data.data.shape[2], final_loss=f"{hist[-1].loss:.6f}")
    save_checkpoint(model, args.out, extra=extra)
    man.outputs.append(args.out)
    for rec in hist:
        log.info("epoch=%d lr=%.5g loss=%.5f train_acc=%.4f", rec.epoch, rec.lr, rec.loss, rec.train_acc)
    print(f"epochs={len(hist)} final_loss={hist[-1].loss:.6f} train_acc={hist[-1].train_acc:.4f} "
          f"params={model.parameter_count()} output={args.out}")
    return 0


def _eval_data(path: str, extra: Dict[str, str]) -> FeatureTensor:
    if is_feature_file(path):
        return load_features(path)
    embed = {k[6:]: v for k, v in extra.items() if k.startswith("embed.")}
    return assemble(load_sequences(path), EmbedConfig.from_kv(embed),
                    np.random.default_rng([int(extra.get("seed", 0)), 3]))


def cmd_eval(args, man: RunManifest) -> int:
    _require(os.path.join(args.ckpt, "manifest.txt"))
    path = _stem(args.data) + ".sktf"
    _require(path)
    man.inputs.extend([args.ckpt, path])
    model, extra = load_checkpoint(args.ckpt)
    data = _eval_data(path, extra)
    if data.labels.size == 0:
        raise Failure(f"{path}: evaluation data has no labels")
    hand = None
    if args.hand_classes:
        _require(args.hand_classes)
        man.inputs.append(args.hand_classes)
        hand = kv.int_list(" ".join(_read_lines(args.hand_classes)))
    rep = evaluate(model, data, hand)
    man.config.update(hand_classes=hand if hand else "none")
    if args.scores:
        base = _stem(args.scores)
        write_tensor(predict_scores(model, data), base + ".sktf")
        _write_lines(base + ".labels", data.labels.tolist())
        man.outputs.extend([base + ".sktf", base + ".labels"])
    if args.report:
        _write_report(args.report, rep, len(data))
        man.outputs.append(args.report)
    _print_report(rep, len(data))
    return 0


def _report_lines(rep: dict, n: int) -> List[str]:
    lines = [f"samples={n}", f"accuracy={rep['accuracy']:.6f}"]
    lines += [f"class_{c}_accuracy={a:.6f}" for c, a in rep["per_class"].items()]
    if "hand_accuracy" in rep:
        lines.append(f"hand_accuracy={rep['hand_accuracy']:.6f}")
    return lines


def _print_report(rep: dict, n: int) -> None:
    print("\n".join(_report_lines(rep, n)))


def _write_report(path: str, rep: dict, n: int) -> None:
    _write_lines(path, _report_lines(rep, n))


def cmd_ensemble(args, man: RunManifest) -> int:
    scores, labels = [], None
    for p in args.scores:
        base = _stem(p)
        _require(base + ".sktf")
        man.inputs.append(base + ".sktf")
        scores.append(read_tensor(base + ".sktf").astype(np.float64))
        if labels is None and os.path.exists(base + ".labels"):
            labels = np.array([int(x) for x in _read_lines(base + ".labels")])
    if args.labels:
        _require(args.labels)
        labels = np.array([int(x) for x in _read_lines(args.labels)])
    if labels is None:
        raise Failure("no labels: pass --labels or keep the .labels sidecar next to the scores")
    weights = kv.float_list(args.weights) if args.weights else None
    man.config.update(weights=weights or "equal", fusion="weighted softmax-score sum")
    acc, pred = ensemble(scores, labels, weights)
    if args.output:
        base = _stem(args.output)
        _write_lines(base + ".pred", pred.tolist())
        man.outputs.append(base + ".pred")
    print(f"models={len(scores)} samples={len(labels)} accuracy={acc:.6f}")
    return 0


def cmd_gradcheck(args, man: RunManifest) -> int:
    cfg = kv.read_kv(args.config) if args.config else {}
    if args.config:
        man.inputs.append(args.config)
    arch = ArchConfig.from_kv({"in_channels": cfg.get("in_channels", 67), "num_classes": cfg.get("num_classes", 6),
                               "num_joints": cfg.get("num_joints", 8), **_split_config(cfg)[0]})
    batch = int(cfg.get("batch", 4))
    if not 1 <= batch <= 4:
        raise Failure("gradient check batch must hold 1 to 4 samples")
    frames, bodies = int(cfg.get("frames", 16)), int(cfg.get("bodies", 1))
    seed, eps = int(cfg.get("seed", 0)), float(cfg.get("eps", 1e-5))
    n_params, tol = int(cfg.get("n_params", 200)), float(cfg.get("tol", 1e-4))
    man.seed = seed
    man.config.update({**arch.to_kv(), "batch": batch, "frames": frames, "bodies": bodies, "eps": eps,
                       "n_params": n_params, "tol": tol})
    rng = np.random.default_rng(seed)
    model = init_model(arch, rng)
    x = rng.normal(size=(batch, bodies, arch.in_channels, frames, arch.num_joints))
    y = rng.integers(0, arch.num_classes, batch)
    err = gradient_check(model, x, y, eps=eps, n_params=n_params, rng=rng)
    ok = err < tol
    man.config["max_rel_error"] = f"{err:.3e}"
    print(f"params={arch.parameter_count()} checked={min(n_params, arch.parameter_count())} "
          f"max_rel_error={err:.3e} tol={tol:g} status={'pass' if ok else 'fail'}")
    return 0 if ok else 1


# ---------------------------------------------------------------- argparse

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded BLAS for reproducible artifacts")
    common.add_argument("--manifest", help="run manifest path (default: next to the output)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sph-hands", description="Spherical-harmonic hand features for skeleton GCNs.")
    p.add_argument("--version", action="version", version=tool_version())
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("parse", parents=[common], help="parse an FPHA or NTU skeleton file to SKTF")
    s.add_argument("--format", choices=("fpha", "ntu"), required=True)
    s.add_argument("--scale", type=float, default=1.0, help="FPHA coordinate scale (e.g. 0.001 for mm to m)")
    s.add_argument("input")
    s.add_argument("output")

    s = sub.add_parser("embed", parents=[common], help="assemble feature tensors from sequences")
    s.add_argument("--mode", default="lshr", choices=("none", "lshr", "lsht", "lshr-only", "lshr_only",
                                                        "random", "random_baseline"))
    s.add_argument("--format", default="mag",
                   choices=("mag", "real", "imag", "real-imag", "mag-phase", "magnitude", "phase",
                            "real_and_imag", "mag_and_phase"))
    s.add_argument("--degrees", default="1,2")
    s.add_argument("--hand-set", default=None, help="'all', 'ntu' or a key=value file with hand_set = ids")
    s.add_argument("--up-axis", default="y", choices=("x", "y", "z"))
    s.add_argument("--frames", type=int, default=None)
    s.add_argument("--bodies", type=int, default=None, help="fix M (e.g. 2 for NTU); default: max in the data")
    s.add_argument("--modality", default="location", choices=("location", "velocity"))
    s.add_argument("--center", action="store_true", help="subtract each recording's centroid from raw channels")
    s.add_argument("--lsht-normalize", action="store_true")
    s.add_argument("--seed", type=int, default=0, help="rng seed for the random baseline")
    s.add_argument("input")
    s.add_argument("output")

    s = sub.add_parser("verify", parents=[common], help="run a harmonic invariance check")
    s.add_argument("--property", choices=PROPERTIES, required=True)
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--samples", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic gesture dataset")
    s.add_argument("--spec", default=None)
    s.add_argument("--n", type=int, required=True, help="samples per class")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=None)
    s.add_argument("--rotation", choices=("none", "about_up_axis", "so3_uniform"), default=None)
    s.add_argument("output")

    s = sub.add_parser("train", parents=[common], help="train a classifier")
    s.add_argument("--config", default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--hand-classes", default=None)
    s.add_argument("--scores", default=None, help="write softmax scores (SKTF) for ensembling")
    s.add_argument("--report", default=None, help="write the key=value report to a file")

    s = sub.add_parser("ensemble", parents=[common], help="fuse score tensors")
    s.add_argument("scores", nargs="+")
    s.add_argument("--weights", default=None)
    s.add_argument("--labels", default=None)
    s.add_argument("--output", default=None)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--config", default=None)
    return p


COMMANDS = {"parse": cmd_parse, "embed": cmd_embed, "verify": cmd_verify, "synth": cmd_synth,
            "train": cmd_train, "eval": cmd_eval, "ensemble": cmd_ensemble, "gradcheck": cmd_gradcheck}


def _manifest_path(args) -> str:
    if args.manifest:
        return args.manifest
    target = getattr(args, "out", None) or getattr(args, "output", None)
    if args.command in ("parse", "embed", "synth") or (args.command == "ensemble" and target):
        return _stem(target) + ".manifest"
    if args.command == "train":
        return os.path.join(args.out, "run.manifest")
    return f"sph_hands_{args.command}.manifest"


def _thread_limit(deterministic: bool):
    env = os.environ.get("SPH_HANDS_THREADS")
    limit = 1 if deterministic else (int(env) if env else None)
    if limit is None:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.debug("threadpoolctl unavailable; BLAS thread count left unchanged")
        return contextlib.nullcontext()
    return threadpool_limits(limits=max(1, limit))


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    man = RunManifest(args.command, argv)
    man.config["deterministic"] = args.deterministic
    status = 1
    try:
        with _thread_limit(args.deterministic):
            status = COMMANDS[args.command](args, man)
    except (Failure, ParseError, ContainerError, kv.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = 1
    finally:
        path = _manifest_path(args)
        try:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            man.write(path, status)
        except OSError as exc:
            print(f"warning: cannot write manifest {path}: {exc}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
