"""Synthetic hand-gesture sequences for desk-scale experiments.

Six trajectory families act on a rest-pose hand template:

    pinch      thumb tip and index tip close in on each other
    spread     fingers fan out away from the palm
    wave       the hand swings about the wrist (rotation about the forward axis)
    circle     the whole hand translates along a vertical circle
    fist_curl  finger joints curl toward the palm
    point      the index tip extends while the other fingers curl

Each family has a motion envelope s(t) in [0, 1] or sin(.), with per-sample
amplitude, frequency and phase jitter. Coordinates are metres, y is up,
z points forward.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config as kv
from .geometry import sample_rotation
from .skeleton_io import SkeletonSequence, read_tensor, write_tensor


@dataclass(frozen=True)
class HandRoles:
    wrist: int
    palm: int
    thumb_tip: int
    index_tip: int
    members: Tuple[int, ...]  # every joint of this hand except the wrist
    curl: Tuple[float, ...]  # per member: fraction of the full curl it travels


@dataclass(frozen=True)
class HandTemplate:
    name: str
    rest: np.ndarray  # (V, 3)
    hands: Tuple[HandRoles, ...]

    @property
    def joints(self) -> int:
        return self.rest.shape[0]


def _hand8() -> HandTemplate:
    # two hands of (wrist, hand, hand tip, thumb), NTU hand-set order
    left = np.array([
        [-0.15, 1.00, 0.30],
        [-0.15, 1.08, 0.31],
        [-0.15, 1.16, 0.32],
        [-0.10, 1.06, 0.33],
    ])
    right = left * np.array([-1.0, 1.0, 1.0])
    rest = np.concatenate([left, right])
    hands = tuple(
        HandRoles(wrist=o, palm=o + 1, thumb_tip=o + 3, index_tip=o + 2,
                  members=(o + 1, o + 2, o + 3), curl=(0.2, 1.0, 0.6))
        for o in (0, 4)
    )
    return HandTemplate("hand8", rest, hands)


def _hand21() -> HandTemplate:
    # wrist, MCPs (thumb..pinky), then PIP, DIP, TIP per finger
    wrist = np.array([0.0, 1.0, 0.3])
    rest = [wrist]
    spread = np.deg2rad([-50.0, -15.0, 0.0, 12.0, 24.0])
    lengths = [(0.03, 0.03, 0.025), (0.04, 0.025, 0.02), (0.045, 0.028, 0.022),
               (0.042, 0.026, 0.02), (0.035, 0.02, 0.018)]
    mcp_len = [0.04, 0.09, 0.09, 0.085, 0.08]
    dirs = [np.array([np.sin(a), np.cos(a), 0.0]) for a in spread]
    mcps = [wrist + d * l for d, l in zip(dirs, mcp_len)]
    rest.extend(mcps)
    for f in range(5):
        p = mcps[f]
        for seg in lengths[f]:
            p = p + dirs[f] * seg
            rest.append(p)
    rest = np.array(rest)
    members = tuple(range(1, 21))
    curl = tuple([0.1] * 5 + [c for _ in range(5) for c in (0.4, 0.7, 1.0)])
    hands = (HandRoles(wrist=0, palm=3, thumb_tip=8, index_tip=11, members=members, curl=curl),)
    return HandTemplate("hand21", rest, hands)


TEMPLATES: Dict[str, Callable[[], HandTemplate]] = {"hand8": _hand8, "hand21": _hand21}
FAMILIES = ("pinch", "spread", "wave", "circle", "fist_curl", "point")


def _rise(t: np.ndarray, freq: float, phase: float) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * freq * t + phase))


def _motion(family: str, tpl: HandTemplate, t: np.ndarray, amp: float, freq: float,
            phase: float) -> np.ndarray:
    """Joint positions (T, V, 3) for one family and parameter draw."""
    T = len(t)
    pos = np.repeat(tpl.rest[None], T, axis=0)
    s = _rise(t, freq, phase)[:, None]
    for h in tpl.hands:
        palm = tpl.rest[h.palm]
        if family == "pinch":
            a, b = tpl.rest[h.thumb_tip], tpl.rest[h.index_tip]
            mid = 0.5 * (a + b)
            pos[:, h.thumb_tip] = a + (mid - a) * amp * s
            pos[:, h.index_tip] = b + (mid - b) * amp * s
        elif family == "spread":
            for j in h.members:
                if j != h.palm:
                    pos[:, j] = palm + (tpl.rest[j] - palm) * (1.0 + amp * s)
        elif family == "wave":
            ang = amp * np.sin(2.0 * np.pi * freq * t + phase)
            c, sn = np.cos(ang)[:, None], np.sin(ang)[:, None]
            for j in h.members:
                d = tpl.rest[j] - tpl.rest[h.wrist]
                pos[:, j, 0] = tpl.rest[h.wrist][0] + c[:, 0] * d[0] - sn[:, 0] * d[1]
                pos[:, j, 1] = tpl.rest[h.wrist][1] + sn[:, 0] * d[0] + c[:, 0] * d[1]
        elif family == "circle":
            ang = 2.0 * np.pi * freq * t + phase
            shift = np.stack([np.cos(ang) - np.cos(phase), np.sin(ang) - np.sin(phase),
                              np.zeros_like(t)], axis=1) * amp * 0.1
            for j in (h.wrist,) + h.members:
                pos[:, j] = tpl.rest[j] + shift
        elif family in ("fist_curl", "point"):
            for j, w in zip(h.members, h.curl):
                if family == "point" and j == h.index_tip:
                    d = tpl.rest[j] - palm
                    pos[:, j] = tpl.rest[j] + d * amp * s
                else:
                    pos[:, j] = tpl.rest[j] + (palm - tpl.rest[j]) * amp * w * s
        else:
            raise ValueError(f"unknown gesture family {family!r}")
    return pos


@dataclass(frozen=True)
class GestureSpec:
    label: int
    family: str
    template: str = "hand8"
    amplitude: Tuple[float, float] = (0.6, 0.9)
    frequency: Tuple[float, float] = (0.8, 1.2)  # cycles per recording
    phase: Tuple[float, float] = (0.0, 0.5)
    noise: float = 0.002  # isotropic per-coordinate sigma, metres
    translation: float = 0.05  # per-sample global offset sigma, metres
    rotation: str = "none"  # none | about_up_axis | so3_uniform
    up_axis: str = "y"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown gesture family {self.family!r}; choose from {FAMILIES}")
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}")
        for name in ("amplitude", "frequency", "phase"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range {lo} > {hi}")
        if self.noise < 0 or self.translation < 0:
            raise ValueError("noise and translation must be >= 0")


def default_specs(template: str = "hand8", rotation: str = "none", noise: float = 0.002) -> List[GestureSpec]:
    return [GestureSpec(i, fam, template=template, rotation=rotation, noise=noise)
            for i, fam in enumerate(FAMILIES)]


def load_specs(path: str) -> Tuple[List[GestureSpec], dict]:
    """Read a gesture spec file.

    Global keys: ``classes`` (comma-separated families, label = position),
    ``template``, ``noise``, ``translation``, ``rotation``, ``up_axis``,
    ``amplitude``/``frequency``/``phase`` (``lo,hi``). Per-class overrides
    use ``<family>.<key>``. Remaining keys (``frames``, ``n``, ...) are
    returned untouched.
    """
    cfg = kv.read_kv(path)
    families = [f.strip() for f in cfg.get("classes", ",".join(FAMILIES)).split(",") if f.strip()]
    if not families:
        raise kv.ConfigError(f"{path}: no classes")
    spec_keys = ("template", "noise", "translation", "rotation", "up_axis", "amplitude", "frequency", "phase")

    def typed(key: str, value: str):
        if key in ("amplitude", "frequency", "phase"):
            lo_hi = kv.float_list(value)
            if len(lo_hi) != 2:
                raise kv.ConfigError(f"{path}: {key} needs 'lo,hi'")
            return lo_hi
        if key in ("noise", "translation"):
            return float(value)
        return value

    base = {k: typed(k, cfg[k]) for k in spec_keys if k in cfg}
    specs = []
    for label, fam in enumerate(families):
        over = {k.split(".", 1)[1]: typed(k.split(".", 1)[1], v)
                for k, v in cfg.items() if k.startswith(fam + ".")}
        try:
            specs.append(GestureSpec(label, fam, **{**base, **over}))
        except (TypeError, ValueError) as exc:
            raise kv.ConfigError(f"{path}: {exc}") from None
    rest = {k: v for k, v in cfg.items()
            if k not in spec_keys and k != "classes" and "." not in k}
    return specs, rest


def generate_one(spec: GestureSpec, frames: int, rng: np.random.Generator,
                 rotation: Optional[str] = None) -> SkeletonSequence:
    tpl = TEMPLATES[spec.template]()
    t = np.linspace(0.0, 1.0, frames)
    amp = rng.uniform(*spec.amplitude)
    freq = rng.uniform(*spec.frequency)
    phase = 2.0 * np.pi * rng.uniform(*spec.phase)
    pos = _motion(spec.family, tpl, t, amp, freq, phase)
    pos = pos + rng.normal(0.0, spec.translation, 3) if spec.translation else pos
    if spec.noise:
        pos = pos + rng.normal(0.0, spec.noise, pos.shape)
    mode = spec.rotation if rotation is None else rotation
    if mode != "none":
        R = sample_rotation(rng, mode, spec.up_axis)
        centre = pos.reshape(-1, 3).mean(axis=0)
        pos = (pos - centre) @ R.T + centre
    return SkeletonSequence(pos[:, None], label=spec.label, meta={"family": spec.family})


def generate(specs: Sequence[GestureSpec], n: int, frames: int, rng: np.random.Generator,
             rotation: Optional[str] = None) -> List[SkeletonSequence]:
    """``n`` sequences per spec, class-major order.

    ``rotation`` overrides every spec's rotation mode. Rotations turn each
    recording about its own centroid.
    """
    if not specs:
        raise ValueError("no gesture specs")
    if n < 1:
        raise ValueError("n must be >= 1")
    if frames < 2:
        raise ValueError("frames must be >= 2")
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate class labels in specs")
    return [generate_one(spec, frames, rng, rotation) for spec in specs for _ in range(n)]


def split(dataset: Sequence[SkeletonSequence], fraction: float, rng: np.random.Generator
          ) -> Tuple[List[SkeletonSequence], List[SkeletonSequence]]:
    """Label-stratified split; ``fraction`` of each class goes to the first part."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    labels = np.array([s.label for s in dataset])
    first, second = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(fraction * len(idx)))
        first.extend(idx[:k].tolist())
        second.extend(idx[k:].tolist())
    return [dataset[i] for i in sorted(first)], [dataset[i] for i in sorted(second)]


def rotate_each(dataset: Sequence[SkeletonSequence], mode: str, rng: np.random.Generator,
                up_axis: str = "y") -> List[SkeletonSequence]:
    """Independently rotate every recording about its centroid."""
    out = []
    for s in dataset:
        R = sample_rotation(rng, mode, up_axis)
        centre = s.coords.reshape(-1, 3).mean(axis=0)
        out.append(s.with_coords((s.coords - centre) @ R.T + centre))
    return out


def save_dataset(seqs: Sequence[SkeletonSequence], path: str) -> Tuple[str, str]:
    """Write coords as one SKTF (N, T, M, V, 3) tensor plus a ``.labels`` sidecar."""
    shapes = {s.coords.shape for s in seqs}
    if len(shapes) != 1:
        raise ValueError("dataset export needs equal-shaped sequences")
    base = path[:-5] if path.endswith(".sktf") else path
    tensor_path, label_path = base + ".sktf", base + ".labels"
    write_tensor(np.stack([s.coords for s in seqs]), tensor_path)
    with open(label_path, "w", encoding="utf-8") as fh:
        fh.write("".join(f"{-1 if s.label is None else s.label}\n" for s in seqs))
    return tensor_path, label_path


def load_dataset(path: str) -> List[SkeletonSequence]:
    base = path[:-5] if path.endswith(".sktf") else path
    coords = read_tensor(base + ".sktf").astype(np.float64)
    if coords.ndim != 5 or coords.shape[-1] != 3:
        raise ValueError(f"dataset tensor must be (N, T, M, V, 3), got {coords.shape}")
    labels: List[Optional[int]] = [None] * coords.shape[0]
    if os.path.exists(base + ".labels"):
        with open(base + ".labels", "r", encoding="utf-8") as fh:
            raw = [int(line) for line in fh if line.strip()]
        if len(raw) != coords.shape[0]:
            raise ValueError(f"{len(raw)} labels for {coords.shape[0]} sequences")
        labels = [None if l < 0 else l for l in raw]
    return [SkeletonSequence(c, label=l) for c, l in zip(coords, labels)]


def with_rotation(specs: Sequence[GestureSpec], mode: str) -> List[GestureSpec]:
    return [replace(s, rotation=mode) for s in specs]
