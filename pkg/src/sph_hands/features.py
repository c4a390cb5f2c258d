"""Model-ready feature tensors: temporal resizing, velocity, and harmonic
embeddings concatenated onto the Cartesian channels.

Tensor layout is (N, M, C, T, V). Embedding channels exist for every joint
but are non-zero only at joints of the hand set.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import config as kv
from .geometry import rotate, sample_rotation, to_local
from .harmonics import (
    DEFAULT_DEGREES,
    FORMAT_PARTS,
    canonical_format,
    complex_format,
    harmonic_indices,
    lshr_embed,
    lsht_transform,
)
from .skeleton_io import NTU_JOINTS, SkeletonSequence

MODES = ("none", "lshr", "lsht", "lshr_only", "random_baseline")
MODE_ALIASES = {"lshr-only": "lshr_only", "random": "random_baseline", "random-baseline": "random_baseline"}
MODALITIES = ("location", "velocity")

# 0-based NTU ids: left wrist, left hand, left hand tip, left thumb, and the right-side counterparts.
NTU_HAND_SET = (6, 7, 21, 22, 10, 11, 23, 24)


@dataclass(frozen=True)
class EmbedConfig:
    mode: str = "lshr"
    fmt: str = "magnitude"
    degrees: Tuple[int, ...] = DEFAULT_DEGREES
    hand_set: Optional[Tuple[int, ...]] = None  # None: every joint
    up_axis: str = "y"
    frames: Optional[int] = None  # target T*; None keeps each sequence's length
    bodies: Optional[int] = None  # None: max body count in the batch
    modality: str = "location"
    lsht_normalize: bool = False
    center: bool = False  # subtract each recording's centroid from the raw channels

    def __post_init__(self):
        object.__setattr__(self, "mode", MODE_ALIASES.get(self.mode, self.mode))
        if self.mode not in MODES:
            raise ValueError(f"unknown embedding mode {self.mode!r}; choose from {MODES}")
        object.__setattr__(self, "fmt", canonical_format(self.fmt))
        object.__setattr__(self, "degrees", tuple(sorted(set(int(d) for d in self.degrees))))
        harmonic_indices(self.degrees)
        if self.hand_set is not None:
            object.__setattr__(self, "hand_set", tuple(int(j) for j in self.hand_set))
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.frames is not None and self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.bodies is not None and self.bodies < 1:
            raise ValueError("bodies must be >= 1")

    @property
    def has_raw(self) -> bool:
        return self.mode != "lshr_only"

    @property
    def embed_kind(self) -> Optional[str]:
        if self.mode == "none":
            return None
        return "lsht" if self.mode == "lsht" else "lshr"

    def to_kv(self) -> dict:
        return {
            "mode": self.mode,
            "format": self.fmt,
            "degrees": self.degrees,
            "hand_set": "all" if self.hand_set is None else self.hand_set,
            "up_axis": self.up_axis,
            "frames": self.frames,
            "bodies": self.bodies,
            "modality": self.modality,
            "lsht_normalize": self.lsht_normalize,
            "center": self.center,
        }

    @classmethod
    def from_kv(cls, cfg: dict) -> "EmbedConfig":
        hand = cfg.get("hand_set", "all")
        return cls(
            mode=cfg.get("mode", "lshr"),
            fmt=cfg.get("format", "magnitude"),
            degrees=kv.int_list(cfg.get("degrees", "1,2")),
            hand_set=None if hand in ("all", "", "None") else kv.int_list(hand),
            up_axis=cfg.get("up_axis", "y"),
            frames=kv.get_opt_int(cfg, "frames", None),
            bodies=kv.get_opt_int(cfg, "bodies", None),
            modality=cfg.get("modality", "location"),
            lsht_normalize=kv.get_bool(cfg, "lsht_normalize", False),
            center=kv.get_bool(cfg, "center", False),
        )


@dataclass(frozen=True)
class FeatureTensor:
    data: np.ndarray  # (N, M, C, T, V)
    channel_map: Tuple[str, ...]
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if self.data.ndim != 5:
            raise ValueError(f"feature data must be 5-D (N, M, C, T, V), got {self.data.shape}")
        if len(self.channel_map) != self.data.shape[2]:
            raise ValueError(f"{len(self.channel_map)} channel names for C={self.data.shape[2]}")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.size and labels.shape != (self.data.shape[0],):
            raise ValueError(f"labels shape {labels.shape} does not match N={self.data.shape[0]}")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.data.shape[0]

    def subset(self, idx) -> "FeatureTensor":
        labels = self.labels[idx] if self.labels.size else self.labels
        return FeatureTensor(self.data[idx], self.channel_map, labels)


def resize_temporal(seq: SkeletonSequence, frames: int) -> SkeletonSequence:
    """Linear interpolation onto ``frames`` evenly spaced points spanning the recording."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    coords = seq.coords
    T = coords.shape[0]
    if T == 1:
        return seq.with_coords(np.repeat(coords, frames, axis=0))
    pos = np.linspace(0.0, T - 1, frames)
    lo = np.minimum(np.floor(pos).astype(int), T - 2)
    frac = (pos - lo)[:, None, None, None]
    out = coords[lo] * (1.0 - frac) + coords[lo + 1] * frac
    return seq.with_coords(out)


def velocity(seq: SkeletonSequence) -> SkeletonSequence:
    """Forward difference in time; the last frame is zero."""
    out = np.zeros_like(seq.coords)
    out[:-1] = seq.coords[1:] - seq.coords[:-1]
    return seq.with_coords(out)


def ntu_hand_set(path: Optional[str] = None, n_joints: int = NTU_JOINTS) -> Tuple[int, ...]:
    """Default NTU hand joints, or the ids listed in a config file.

    The file may hold ``hand_set = 6, 7, ...`` or just whitespace/comma
    separated ids.
    """
    if path is None:
        return NTU_HAND_SET
    return read_hand_set(path, n_joints)


def read_hand_set(path: str, n_joints: int) -> Tuple[int, ...]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise kv.ConfigError(f"cannot read hand set {path}: {exc.strerror}") from None
    if "=" in text:
        cfg = kv.parse_kv(text, path)
        if "hand_set" not in cfg:
            raise kv.ConfigError(f"{path}: missing 'hand_set' key")
        ids = kv.int_list(cfg["hand_set"])
    else:
        ids = kv.int_list(" ".join(line.split("#", 1)[0] for line in text.splitlines()))
    if not ids:
        raise kv.ConfigError(f"{path}: empty hand set")
    bad = [j for j in ids if not 0 <= j < n_joints]
    if bad:
        raise kv.ConfigError(f"{path}: joint ids {bad} out of range [0, {n_joints})")
    if len(set(ids)) != len(ids):
        raise kv.ConfigError(f"{path}: duplicate joint ids")
    return ids


def embedding_channel_names(cfg: EmbedConfig, hand_ids: Sequence[int]) -> Tuple[str, ...]:
    """Names of the embedding channels in stored order.

    LSHR: part, then neighbour, then (l, m). LSHT: part, then (l, m).
    """
    kind = cfg.embed_kind
    if kind is None:
        return ()
    idx = harmonic_indices(cfg.degrees)
    parts = FORMAT_PARTS[cfg.fmt]
    if kind == "lsht":
        return tuple(f"lsht_l{l}_m{m}_{p}" for p in parts for l, m in idx)
    # random_baseline reuses the LSHR names so both configs share one channel_map
    return tuple(f"lshr_l{l}_m{m}_{p}_n{w}" for p in parts for w in hand_ids for l, m in idx)


def channel_count(cfg: EmbedConfig, n_hand: int) -> int:
    """3 raw channels (unless lshr_only) plus the embedding channels."""
    per = sum(2 * l + 1 for l in cfg.degrees) * len(FORMAT_PARTS[cfg.fmt])
    if cfg.embed_kind is None:
        emb = 0
    elif cfg.embed_kind == "lsht":
        emb = per
    else:
        emb = n_hand * per
    return (3 if cfg.has_raw else 0) + emb


def raw_channel_names(cfg: EmbedConfig) -> Tuple[str, ...]:
    if not cfg.has_raw:
        return ()
    prefix = "cart" if cfg.modality == "location" else "vel"
    return tuple(f"{prefix}_{a}" for a in "xyz")


def center_sequence(coords: np.ndarray) -> np.ndarray:
    """Subtract the centroid of all present joints; absent (all-zero) bodies stay zero."""
    present = np.any(coords != 0.0, axis=(-1, -2))  # (T, M)
    if not present.any():
        return coords
    centroid = coords[present].reshape(-1, 3).mean(axis=0)
    return np.where(present[:, :, None, None], coords - centroid, 0.0)


def _fit_bodies(coords: np.ndarray, bodies: int) -> np.ndarray:
    T, M, V, _ = coords.shape
    if M >= bodies:
        return coords[:, :bodies]
    out = np.zeros((T, bodies, V, 3))
    out[:, :M] = coords
    return out


def _embed_values(coords: np.ndarray, cfg: EmbedConfig, hand_ids: Tuple[int, ...]) -> np.ndarray:
    """Embedding channels at the hand joints, shape (T, M, |S|, C_emb)."""
    fld = to_local(coords, hand_ids, cfg.up_axis)
    T, M, n = fld.r.shape[:3]
    if cfg.embed_kind == "lsht":
        vals = lsht_transform(fld, cfg.degrees, normalize=cfg.lsht_normalize).values
    else:
        vals = lshr_embed(fld, cfg.degrees).values.reshape(T, M, n, -1)
    out = complex_format(vals, cfg.fmt)
    # zero-padded (absent) bodies carry no embedding
    present = np.any(coords != 0.0, axis=(-1, -2))
    return np.where(present[:, :, None, None], out, 0.0)


def assemble(batch: Sequence[SkeletonSequence], cfg: EmbedConfig,
             rng: Optional[np.random.Generator] = None) -> FeatureTensor:
    """Stack sequences into a FeatureTensor per ``cfg``.

    Raw channels come first, embeddings after. ``random_baseline`` replaces
    the LSHR values by standard-normal draws from ``rng`` at the hand joints.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    joints = {s.joints for s in batch}
    if len(joints) != 1:
        raise ValueError(f"inconsistent joint counts across batch: {sorted(joints)}")
    V = joints.pop()
    hand_ids = tuple(range(V)) if cfg.hand_set is None else cfg.hand_set
    bad = [j for j in hand_ids if not 0 <= j < V]
    if bad:
        raise ValueError(f"hand joint ids {bad} out of range for V={V}")
    if cfg.frames is None and len({s.frames for s in batch}) != 1:
        raise ValueError("sequences differ in length; set frames to resize")
    if cfg.mode == "random_baseline" and rng is None:
        raise ValueError("random_baseline needs an rng")
    bodies = cfg.bodies or max(s.bodies for s in batch)
    names = raw_channel_names(cfg) + embedding_channel_names(cfg, hand_ids)
    n_raw = len(raw_channel_names(cfg))
    n_emb = len(names) - n_raw
    T = cfg.frames or batch[0].frames
    data = np.zeros((len(batch), bodies, len(names), T, V))
    for i, seq in enumerate(batch):
        if cfg.frames is not None and seq.frames != cfg.frames:
            seq = resize_temporal(seq, cfg.frames)
        coords = _fit_bodies(seq.coords, bodies)
        if n_raw:
            if cfg.center:
                coords = center_sequence(coords)
            raw = coords if cfg.modality == "location" else velocity(seq.with_coords(coords)).coords
            data[i, :, :n_raw] = raw.transpose(1, 3, 0, 2)
        if n_emb:
            if cfg.mode == "random_baseline":
                emb = rng.standard_normal((T, bodies, len(hand_ids), n_emb))
            else:
                emb = _embed_values(coords, cfg, hand_ids)
            data[i, :, n_raw:, :, list(hand_ids)] = emb.transpose(2, 1, 3, 0)
    labels = [s.label for s in batch]
    labels = np.array(labels, dtype=np.int64) if all(l is not None for l in labels) else np.zeros(0, np.int64)
    return FeatureTensor(data, names, labels)


def hand_joint_mask(cfg: EmbedConfig, V: int) -> np.ndarray:
    mask = np.zeros(V, dtype=bool)
    mask[list(range(V) if cfg.hand_set is None else cfg.hand_set)] = True
    return mask


def rotation_augmenter(seqs: Sequence[SkeletonSequence], cfg: EmbedConfig, mode: str = "so3_uniform",
                       per: str = "sequence") -> Callable[[np.random.Generator], FeatureTensor]:
    """Build a callable that re-rotates ``seqs`` and re-embeds them.

    ``per="sequence"`` draws one rotation per recording, ``per="frame"`` one
    per frame. Rotation happens before embedding.
    """
    if per not in ("sequence", "frame"):
        raise ValueError(f"per must be 'sequence' or 'frame', got {per!r}")
    seqs = list(seqs)

    def augment(rng: np.random.Generator) -> FeatureTensor:
        rotated: List[SkeletonSequence] = []
        for s in seqs:
            if per == "sequence":
                rotated.append(rotate(s, sample_rotation(rng, mode, cfg.up_axis)))
            else:
                Rs = np.stack([sample_rotation(rng, mode, cfg.up_axis) for _ in range(s.frames)])
                rotated.append(s.with_coords(np.einsum("tij,tmvj->tmvi", Rs, s.coords)))
        return assemble(rotated, cfg, rng)

    return augment


def with_mode(cfg: EmbedConfig, mode: str) -> EmbedConfig:
    return replace(cfg, mode=mode)
