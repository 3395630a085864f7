"""Skeleton recordings: the ``.mseq`` text format, canonicalization, synthetic motion.

``.mseq`` layout::

    MSEQ1 <kind> <fps> <K> <L>
    <K space-separated reals>      # L lines, one frame each

Lines starting with ``#`` are comments.  Positions are stored as
consecutive (x, y, z) triples per joint, the first joint being the root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

KINDS = ("positions", "angles")
SUFFIX = ".mseq"


@dataclass(frozen=True)
class Recording:
    name: str
    fps: float
    frames: np.ndarray  # K x L
    kind: str = "positions"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"recording kind must be one of {KINDS}, got {self.kind!r}")
        if not self.fps > 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if self.frames.ndim != 2 or self.frames.shape[1] < 1:
            raise ConfigError(f"recording {self.name!r} needs a K x L frame matrix with L >= 1")
        if self.kind == "positions" and self.frames.shape[0] % 3:
            raise ConfigError(f"positions need K divisible by 3, got K={self.frames.shape[0]}")

    @property
    def k(self) -> int:
        return self.frames.shape[0]

    @property
    def length(self) -> int:
        return self.frames.shape[1]

    @property
    def frame_ms(self) -> float:
        return 1000.0 / self.fps


def format_recording(rec: Recording) -> str:
    lines = [f"MSEQ1 {rec.kind} {rec.fps!r} {rec.k} {rec.length}"]
    for frame in rec.frames.T:
        lines.append(" ".join(f"{x:.17g}" for x in frame))
    return "\n".join(lines) + "\n"


def save_recording(path, rec: Recording) -> Path:
    path = Path(path)
    path.write_text(format_recording(rec), encoding="utf-8", newline="\n")
    return path


def parse_recording(text: str, name: str = "<string>", path=None) -> Recording:
    where = path if path is not None else name
    header = None
    rows: list[list[float]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if header is None:
            if len(fields) != 5 or fields[0] != "MSEQ1":
                raise ParseError(f"bad header {stripped!r}, expected 'MSEQ1 <kind> <fps> <K> <L>'", where, lineno)
            kind = fields[1]
            if kind not in KINDS:
                raise ParseError(f"unknown kind {kind!r}", where, lineno)
            try:
                fps, k, length = float(fields[2]), int(fields[3]), int(fields[4])
            except ValueError:
                raise ParseError(f"bad header numbers in {stripped!r}", where, lineno) from None
            if not (math.isfinite(fps) and fps > 0 and k > 0 and length > 0):
                raise ParseError("header needs fps > 0, K > 0 and L > 0", where, lineno)
            header = (kind, fps, k, length)
            continue
        if len(fields) != header[2]:
            raise ParseError(f"expected {header[2]} values, found {len(fields)}", where, lineno)
        try:
            values = [float(x) for x in fields]
        except ValueError:
            raise ParseError("non-numeric value", where, lineno) from None
        if not all(math.isfinite(x) for x in values):
            raise ParseError("non-finite value", where, lineno)
        rows.append(values)
    if header is None:
        raise ParseError("missing MSEQ1 header", where)
    kind, fps, k, length = header
    if len(rows) != length:
        raise ParseError(f"header promises {length} frames, found {len(rows)}", where)
    try:
        return Recording(name, fps, np.array(rows, dtype=np.float64).T, kind)
    except ConfigError as exc:
        raise ParseError(str(exc), where) from None


def load_recordings(path) -> list[Recording]:
    """Load one ``.mseq`` file, or every ``.mseq`` in a directory in name order."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == SUFFIX)
    elif path.is_file():
        files = [path]
    else:
        raise ParseError("no such file or directory", path)
    out = []
    for f in files:
        try:
            text = f.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ParseError(f"cannot read: {exc}", f) from None
        out.append(parse_recording(text, f.stem, f))
    return out


def remove_global_rotation(rec: Recording) -> Recording:
    """Hook for zeroing the global orientation.

    Needs skeleton metadata (which joints span the body frame) that the
    recording format does not carry, so it returns the input unchanged.
    """
    return rec


def canonicalize(rec: Recording, target_fps: float = 25.0) -> Recording:
    """Zero the global translation (root joint) and downsample to ``target_fps``."""
    if target_fps > rec.fps * (1 + 1e-9):
        raise ConfigError(f"cannot upsample {rec.name!r} from {rec.fps} to {target_fps} fps")
    frames = rec.frames
    if rec.kind == "positions":
        root = frames[0:3]
        frames = frames - np.tile(root, (rec.k // 3, 1))
    step = max(1, round(rec.fps / target_fps))
    frames = frames[:, ::step].copy()
    return remove_global_rotation(replace(rec, fps=rec.fps / step, frames=frames))


@dataclass(frozen=True)
class SynthSpec:
    """Quasi-periodic multi-joint motion.

    Each non-root coordinate is a rest offset plus 2-3 sinusoids picked from
    ``frequencies`` (Hz) with amplitude ``amplitudes[i] * U(0.5, 1)`` and a
    random phase, plus a linear drift of at most ``drift * max(amplitudes)``
    per second.  The root joint stays at the origin.
    """

    joints: int = 11
    frames: int = 120
    fps: float = 25.0
    frequencies: tuple[float, ...] = (0.4, 0.7, 1.1)
    amplitudes: tuple[float, ...] = (120.0, 60.0, 30.0)
    drift: float = 0.1
    rest: float = 200.0
    seed: int = 0

    def step_bound(self) -> float:
        """Upper bound on any coordinate's change between adjacent frames."""
        terms = sorted((a * 2 * math.pi * f for a, f in zip(self.amplitudes, self.frequencies)), reverse=True)
        peak = max(self.amplitudes, default=0.0)
        return (sum(terms[:3]) + self.drift * peak) / self.fps


def synth_generate(spec: SynthSpec, name: str | None = None) -> Recording:
    if spec.joints < 2:
        raise ConfigError(f"synthetic recordings need at least 2 joints, got {spec.joints}")
    if len(spec.frequencies) != len(spec.amplitudes) or len(spec.frequencies) < 2:
        raise ConfigError("frequencies and amplitudes must be equally long, with at least 2 entries")
    rng = np.random.default_rng(spec.seed)
    k = 3 * spec.joints
    time = np.arange(spec.frames) / spec.fps
    frames = np.zeros((k, spec.frames))
    freqs = np.asarray(spec.frequencies, dtype=np.float64)
    amps = np.asarray(spec.amplitudes, dtype=np.float64)
    peak = float(amps.max())
    for row in range(3, k):
        count = int(rng.integers(2, 4)) if len(freqs) >= 3 else 2
        picks = rng.choice(len(freqs), size=count, replace=False)
        scale = rng.uniform(0.5, 1.0, size=count)
        phase = rng.uniform(0.0, 2 * np.pi, size=count)
        signal = (amps[picks, None] * scale[:, None]
                  * np.sin(2 * np.pi * freqs[picks, None] * time + phase[:, None])).sum(axis=0)
        drift = rng.uniform(-1.0, 1.0) * spec.drift * peak
        offset = rng.uniform(-1.0, 1.0) * spec.rest
        frames[row] = offset + signal + drift * time
    return Recording(name or f"synth_{spec.seed}", spec.fps, frames, "positions")
