"""Skeleton file parsers (FPHA, NTU RGB+D) and the SKTF binary tensor container.

SKTF layout (little-endian, row-major, last dim fastest)::

    magic    4 bytes   b"SKTF"
    version  uint32    1
    dtype    uint32    1 = float32, 2 = float64
    ndims    uint32
    dims     ndims * uint64
    payload  prod(dims) * itemsize bytes
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Optional, Sequence, TextIO, Union

import numpy as np

FPHA_JOINTS = 21
NTU_JOINTS = 25
NTU_JOINT_FIELDS = 12

SKTF_MAGIC = b"SKTF"
SKTF_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR_DTYPE = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}


class ParseError(ValueError):
    """Malformed skeleton text. ``line`` is 1-based, ``frame`` 0-based (when known)."""

    def __init__(self, message: str, line: Optional[int] = None, frame: Optional[int] = None):
        self.line = line
        self.frame = frame
        where = []
        if line is not None:
            where.append(f"line {line}")
        if frame is not None:
            where.append(f"frame {frame}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ContainerError(ValueError):
    """Base class for SKTF read/write failures."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class UnsupportedDtypeError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


@dataclass(frozen=True)
class SkeletonSequence:
    """One recording: ``coords`` has shape (T, M, V, 3), float64."""

    coords: np.ndarray
    joint_names: Optional[tuple] = None
    label: Optional[int] = None
    subject_id: Optional[int] = None
    setup_id: Optional[int] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.ndim != 4 or coords.shape[-1] != 3:
            raise ValueError(f"coords must have shape (T, M, V, 3), got {coords.shape}")
        T, M, V, _ = coords.shape
        if T < 1 or M < 1 or V < 1:
            raise ValueError(f"empty sequence dimension: T={T}, M={M}, V={V}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coords contain non-finite values")
        if self.joint_names is not None:
            names = tuple(self.joint_names)
            if len(names) != V:
                raise ValueError(f"{len(names)} joint names for {V} joints")
            object.__setattr__(self, "joint_names", names)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def bodies(self) -> int:
        return self.coords.shape[1]

    @property
    def joints(self) -> int:
        return self.coords.shape[2]

    def with_coords(self, coords: np.ndarray) -> "SkeletonSequence":
        """Copy of this sequence carrying new coordinates and the same metadata."""
        return SkeletonSequence(
            coords,
            joint_names=self.joint_names if coords.shape[2] == self.joints else None,
            label=self.label,
            subject_id=self.subject_id,
            setup_id=self.setup_id,
            meta=dict(self.meta),
        )


def _as_text(stream: Union[TextIO, str, bytes]) -> TextIO:
    if isinstance(stream, (bytes, bytearray)):
        try:
            return io.StringIO(bytes(stream).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise ParseError(f"undecodable input: {exc}") from None
    if isinstance(stream, str):
        return io.StringIO(stream)
    return stream


def _floats(tokens: Sequence[str], lineno: int, frame: Optional[int] = None) -> list:
    out = []
    for tok in tokens:
        try:
            val = float(tok)
        except ValueError:
            raise ParseError(f"non-numeric token {tok!r}", line=lineno, frame=frame) from None
        if not np.isfinite(val):
            raise ParseError(f"non-finite value {tok!r}", line=lineno, frame=frame)
        out.append(val)
    return out


def parse_fpha(stream: Union[TextIO, str, bytes], label: Optional[int] = None,
               scale: float = 1.0) -> SkeletonSequence:
    """Parse an FPHA ``skeleton.txt`` stream.

    Each non-empty line holds a frame index followed by 21*3 coordinates.
    Frame indices must be strictly increasing; they are otherwise dropped.
    ``scale`` multiplies every coordinate (1.0 keeps values verbatim).
    """
    text = _as_text(stream)
    rows = []
    last_index = None
    try:
        lines = list(text)
    except UnicodeDecodeError as exc:
        raise ParseError(f"undecodable input: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if len(tokens) != 1 + 3 * FPHA_JOINTS:
            raise ParseError(
                f"expected {1 + 3 * FPHA_JOINTS} tokens, got {len(tokens)}", line=lineno)
        try:
            index = float(tokens[0])
        except ValueError:
            raise ParseError(f"non-numeric frame index {tokens[0]!r}", line=lineno) from None
        if not np.isfinite(index) or index != int(index):
            raise ParseError(f"frame index {tokens[0]!r} is not an integer", line=lineno)
        if last_index is not None and index <= last_index:
            raise ParseError(f"frame index {int(index)} not increasing", line=lineno)
        last_index = index
        rows.append(_floats(tokens[1:], lineno))
    if not rows:
        raise ParseError("empty FPHA file")
    coords = np.asarray(rows, dtype=np.float64).reshape(len(rows), 1, FPHA_JOINTS, 3)
    if scale != 1.0:
        coords = coords * scale
    return SkeletonSequence(coords, label=label)


class _LineReader:
    def __init__(self, text: TextIO):
        self._lines = iter(text)
        self.lineno = 0

    def next_tokens(self, frame: Optional[int], what: str) -> list:
        for raw in self._lines:
            self.lineno += 1
            tokens = raw.split()
            if tokens:
                return tokens
        raise ParseError(f"unexpected end of file while reading {what}",
                         line=self.lineno + 1, frame=frame)

    def next_int(self, frame: Optional[int], what: str) -> int:
        tokens = self.next_tokens(frame, what)
        if len(tokens) != 1:
            raise ParseError(f"expected a single {what}, got {len(tokens)} tokens",
                             line=self.lineno, frame=frame)
        try:
            value = int(tokens[0])
        except ValueError:
            raise ParseError(f"invalid {what} {tokens[0]!r}", line=self.lineno, frame=frame) from None
        if value < 0:
            raise ParseError(f"negative {what} {value}", line=self.lineno, frame=frame)
        return value

    def trailing(self) -> Optional[int]:
        for raw in self._lines:
            self.lineno += 1
            if raw.strip():
                return self.lineno
        return None


def parse_ntu(stream: Union[TextIO, str, bytes], label: Optional[int] = None) -> SkeletonSequence:
    """Parse an NTU RGB+D ``.skeleton`` stream.

    Only x, y, z of each joint are kept. The body dimension is the maximum
    body count over frames; frames with fewer bodies are zero-padded.
    Frames that contain no body at all count toward T and stay zero.
    """
    reader = _LineReader(_as_text(stream))
    try:
        n_frames = reader.next_int(None, "frame count")
        if n_frames < 1:
            raise ParseError("frame count must be >= 1", line=reader.lineno)
        frames = []
        for t in range(n_frames):
            n_bodies = reader.next_int(t, "body count")
            bodies = []
            for _ in range(n_bodies):
                reader.next_tokens(t, "body info line")
                n_joints = reader.next_int(t, "joint count")
                if n_joints != NTU_JOINTS:
                    raise ParseError(f"joint count {n_joints} != {NTU_JOINTS}",
                                     line=reader.lineno, frame=t)
                joints = np.empty((NTU_JOINTS, 3))
                for j in range(NTU_JOINTS):
                    tokens = reader.next_tokens(t, f"joint {j}")
                    if len(tokens) != NTU_JOINT_FIELDS:
                        raise ParseError(
                            f"joint line has {len(tokens)} fields, expected {NTU_JOINT_FIELDS}",
                            line=reader.lineno, frame=t)
                    joints[j] = _floats(tokens[:3], reader.lineno, t)
                    _floats(tokens[3:], reader.lineno, t)
                bodies.append(joints)
            frames.append(bodies)
        extra = reader.trailing()
    except UnicodeDecodeError as exc:
        raise ParseError(f"undecodable input: {exc}") from None
    if extra is not None:
        raise ParseError(f"trailing data after {n_frames} declared frames", line=extra)
    n_body_max = max(1, max(len(b) for b in frames))
    coords = np.zeros((n_frames, n_body_max, NTU_JOINTS, 3))
    for t, bodies in enumerate(frames):
        for m, joints in enumerate(bodies):
            coords[t, m] = joints
    return SkeletonSequence(coords, label=label,
                            meta={"body_counts": tuple(len(b) for b in frames)})


def write_tensor(tensor: np.ndarray, sink: Union[BinaryIO, str]) -> int:
    """Write ``tensor`` as SKTF. Returns the number of bytes written."""
    arr = np.asarray(tensor)
    code = _CODE_FOR_DTYPE.get(arr.dtype.newbyteorder("<")) if arr.dtype.kind == "f" else None
    if code is None:
        raise UnsupportedDtypeError(f"unsupported dtype {arr.dtype}")
    if arr.ndim == 0 or any(d == 0 for d in arr.shape):
        raise ContainerError(f"dims must be nonzero, got shape {arr.shape}")
    header = SKTF_MAGIC + struct.pack("<III", SKTF_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes(order="C")
    if isinstance(sink, str):
        with open(sink, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    else:
        sink.write(header)
        sink.write(payload)
    return len(header) + len(payload)


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        if what == "payload":
            raise TruncatedPayloadError(f"truncated payload: expected {n} bytes, got {len(data)}")
        raise ContainerError(f"truncated header while reading {what}")
    return data


def read_tensor(source: Union[BinaryIO, str, bytes]) -> np.ndarray:
    """Read one SKTF tensor. The result keeps the stored dtype."""
    if isinstance(source, str):
        with open(source, "rb") as fh:
            return read_tensor(fh)
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    magic = source.read(4)
    if magic != SKTF_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    version, code, ndims = struct.unpack("<III", _read_exact(source, 12, "header"))
    if version != SKTF_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise UnsupportedDtypeError(f"unsupported dtype code {code}")
    if ndims == 0:
        raise ContainerError("ndims must be >= 1")
    dims = struct.unpack(f"<{ndims}Q", _read_exact(source, 8 * ndims, "dims"))
    if any(d == 0 for d in dims):
        raise ContainerError(f"zero dimension in {dims}")
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=object))
    payload = _read_exact(source, count * dtype.itemsize, "payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def sequences_to_tensor(seqs: Iterable[SkeletonSequence]) -> np.ndarray:
    """Stack equal-shaped sequences into an (N, T, M, V, 3) array."""
    seqs = list(seqs)
    shapes = {s.coords.shape for s in seqs}
    if len(shapes) != 1:
        raise ValueError(f"sequences differ in shape: {sorted(shapes)}")
    return np.stack([s.coords for s in seqs])
