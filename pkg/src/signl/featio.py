"""Feature-matrix I/O, dataset manifests, and the synthetic corpus generator.

File format (SIGF, little-endian): 4-byte magic ``SIGF``, u16 version=1,
u32 F, u32 T, then F*T float32 values row-major with frequency as rows.
Manifests are JSON lines with fields path/label/attack_id/split.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SIGF_MAGIC = b"SIGF"
SIGF_VERSION = 1
_HEADER = struct.Struct("<4sHII")  # magic, version, F, T

LABELS = ("bonafide", "fake")
SPLITS = ("train", "dev", "eval")


class FormatError(ValueError):
    """Malformed SIGF file or manifest line."""


class ConfigError(ValueError):
    """Invalid generation / sampling configuration."""


@dataclass
class FeatureMatrix:
    clip_id: str
    values: np.ndarray  # F x T float32

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise FormatError("feature matrix must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise FormatError("feature matrix contains non-finite values")

    @property
    def freq_bins(self):
        return self.values.shape[0]

    @property
    def time_frames(self):
        return self.values.shape[1]


@dataclass
class ManifestEntry:
    path: str
    label: str
    attack_id: str
    split: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise FormatError(f"bad label {self.label!r}")
        if self.split not in SPLITS:
            raise FormatError(f"bad split {self.split!r}")
        if (self.label == "bonafide") != (self.attack_id == "-"):
            raise FormatError("label bonafide iff attack_id is '-'")

    @property
    def clip_id(self):
        return Path(self.path).stem


def write_feature(m: FeatureMatrix, path):
    payload = m.values.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SIGF_MAGIC, SIGF_VERSION, m.freq_bins, m.time_frames))
        fh.write(payload)


def read_feature(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, f, t = _HEADER.unpack(header)
        if magic != SIGF_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != SIGF_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        payload = fh.read(4 * f * t)
    if len(payload) != 4 * f * t:
        raise FormatError(f"{path}: truncated payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(f, t)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite values")
    return FeatureMatrix(clip_id=Path(path).stem, values=values.copy())


def write_manifest(entries, path):
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps({"path": e.path, "label": e.label,
                                 "attack_id": e.attack_id, "split": e.split}) + "\n")


def read_manifest(path):
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                entries.append(ManifestEntry(**d))
            except (json.JSONDecodeError, TypeError, FormatError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return entries


# ---------------------------------------------------------------------------
# synthetic corpus

@dataclass
class SynthConfig:
    F: int = 64
    T: int = 64
    n_per_split: dict = field(default_factory=lambda: {"train": 200, "dev": 50, "eval": 100})
    n_attack_types: int = 3
    artifact_strength: float = 1.0
    seed: int = 0

    def validate(self):
        if self.F <= 0 or self.T <= 0:
            raise ConfigError("F and T must be positive")
        if self.n_attack_types < 1:
            raise ConfigError("n_attack_types must be >= 1")
        if self.artifact_strength < 0:
            raise ConfigError("artifact_strength must be >= 0")
        for s in SPLITS:
            if s not in self.n_per_split or self.n_per_split[s] < 0:
                raise ConfigError(f"n_per_split missing or negative for {s!r}")


def _clip_rng(seed, clip_id):
    digest = hashlib.sha256(f"{seed}:{clip_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _bona_fide_field(rng, f, t):
    """Smooth band-limited random field: low-rank sinusoidal bands + noise."""
    rows = np.arange(f)[:, None]
    cols = np.arange(t)[None, :]
    x = np.zeros((f, t))
    for _ in range(4):
        amp = rng.uniform(0.4, 1.0)
        centre = rng.uniform(0, f)
        width = rng.uniform(f / 8, f / 3)
        period = rng.uniform(t / 4, t)
        phase = rng.uniform(0, 2 * np.pi)
        env = np.exp(-0.5 * ((rows - centre) / width) ** 2)
        x += amp * env * np.sin(2 * np.pi * cols / period + phase)
    x += 0.05 * rng.standard_normal((f, t))
    return x


def _plant_artifact(x, family, strength, rng):
    """Add one artifact instance per temporal half so every graph view sees it."""
    f, t = x.shape
    half = t // 2
    for start in (0, half):
        if family == 0:
            # band discontinuities: two sharp checkerboard-textured rectangles
            bh = max(2, f // 3)
            bw = max(2, half // 3)
            for _ in range(3):
                r0 = rng.integers(0, f - bh + 1)
                c0 = start + rng.integers(0, half - bw + 1)
                rr = np.arange(r0, r0 + bh)[:, None]
                cc = np.arange(c0, c0 + bw)[None, :]
                x[r0:r0 + bh, c0:c0 + bw] += strength * ((-1.0) ** (rr + cc))
        elif family == 1:
            # periodic spectral notches within two time windows
            step = max(3, f // 16)
            bw = max(2, half // 3)
            for _ in range(3):
                r0 = rng.integers(0, step)
                c0 = start + rng.integers(0, half - bw + 1)
                x[r0::step, c0:c0 + bw] -= strength
        else:
            # temporal-seam repetition: blend a copied block over a later block,
            # with rippled seams at both block boundaries
            bw = max(2, half // 4)
            src = start + rng.integers(0, half - 2 * bw + 1)
            dst = src + bw + rng.integers(0, half - (src - start) - 2 * bw + 1)
            x[:, dst:dst + bw] += strength * (x[:, src:src + bw] - x[:, dst:dst + bw])
            ripple = 2.0 * strength * ((-1.0) ** np.arange(f))
            for col in (src, src + bw - 1, dst, dst + bw - 1):
                x[:, col] += ripple if col in (src, dst) else -ripple


def gen_synthetic(cfg: SynthConfig, out_dir):
    """Write a labelled SIGF corpus plus manifest; pure function of cfg."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for split in SPLITS:
        n = cfg.n_per_split[split]
        n_bona = n // 2
        for i in range(n):
            bona = i < n_bona
            if bona:
                attack = "-"
                label = "bonafide"
            else:
                family = (i - n_bona) % cfg.n_attack_types
                attack = f"A{family:02d}"
                label = "fake"
            clip_id = f"{split}_{i:05d}"
            rng = _clip_rng(cfg.seed, clip_id)
            x = _bona_fide_field(rng, cfg.F, cfg.T)
            if not bona:
                _plant_artifact(x, family, cfg.artifact_strength, rng)
            rel = f"{clip_id}.sigf"
            write_feature(FeatureMatrix(clip_id, x), out_dir / rel)
            entries.append(ManifestEntry(path=rel, label=label, attack_id=attack, split=split))
    write_manifest(entries, out_dir / "manifest.jsonl")
    return entries


# ---------------------------------------------------------------------------
# limited-label protocol

def sample_limited_labels(entries, p, seed):
    """Stratified subset of train/dev at fraction p; eval kept whole.

    Per (split, label, attack_id) stratum a seeded shuffle selects
    ceil(p * n) entries, so proportions are preserved within one item.
    """
    if not 0 < p <= 1:
        raise ConfigError("label fraction must be in (0, 1]")
    strata: dict[tuple, list[int]] = {}
    for idx, e in enumerate(entries):
        if e.split in ("train", "dev"):
            strata.setdefault((e.split, e.label, e.attack_id), []).append(idx)
    keep = set(idx for idx, e in enumerate(entries) if e.split == "eval")
    for key, idxs in sorted(strata.items()):
        n_take = math.ceil(p * len(idxs))
        rng = _clip_rng(seed, "|".join(key))
        order = rng.permutation(len(idxs))
        keep.update(idxs[j] for j in order[:n_take])
    return [e for idx, e in enumerate(entries) if idx in keep]
