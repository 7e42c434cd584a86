"""Corpus ingestion: feature files, the JSON-lines manifest, patient-level
splits, the synthetic toy corpus, and the flat key=value config file."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ContractError, DimensionMismatchError, TruncatedPayloadError
from .model import FeatureBundle
from .trainer import content

FEATURE_MAGIC = b"HRMF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")
SPLIT_RATIO = (7, 1, 2)


# ------------------------------------------------------------------ features

def write_features(path, regional):
    """Write an ``N x d`` matrix as little-endian float32 behind an HRMF header."""
    regional = np.asarray(regional, dtype="<f4")
    if regional.ndim != 2 or regional.shape[0] < 1:
        raise ContractError(f"feature matrix must be N x d with N >= 1, got {regional.shape}")
    n, d = regional.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, d) + regional.tobytes())
    tmp.replace(path)


def load_features(path, expected_dim=None):
    """Read an HRMF file into a :class:`FeatureBundle` (global = region mean)."""
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: not a feature file (magic {buf[:4]!r})")
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header is {len(buf)} bytes, need {_HEADER.size}")
    _, version, n, d = _HEADER.unpack_from(buf)
    if version != FEATURE_VERSION:
        raise DimensionMismatchError(f"{path}: unsupported feature format version {version}")
    if n < 1 or d < 1:
        raise DimensionMismatchError(f"{path}: header declares {n} x {d} features")
    if expected_dim is not None and d != expected_dim:
        raise DimensionMismatchError(f"{path}: feature width {d}, expected {expected_dim}")
    need = _HEADER.size + 4 * n * d
    if len(buf) < need:
        raise TruncatedPayloadError(f"{path}: payload has {len(buf) - _HEADER.size} bytes, need {4 * n * d}")
    if len(buf) > need:
        raise DimensionMismatchError(f"{path}: {len(buf) - need} trailing bytes after {n} x {d} payload")
    regional = np.frombuffer(buf, dtype="<f4", count=n * d, offset=_HEADER.size).reshape(n, d)
    return FeatureBundle(regional.astype(np.float64))


# ------------------------------------------------------------------ manifest

@dataclass
class CorpusRecord:
    id: str
    feature_path: str
    report: str
    split: str = "train"
    patient: str | None = None

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ContractError(f"record {self.id}: unknown split {self.split!r}")
        if self.patient is None:
            self.patient = self.id


def write_manifest(path, records):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in records), encoding="utf-8")
    tmp.replace(path)


def read_manifest(path):
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(CorpusRecord(**json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ContractError(f"{path}:{lineno}: bad manifest record ({exc})") from None
    return records


def split_counts(n, ratio=SPLIT_RATIO):
    total = sum(ratio)
    n_train = round(n * ratio[0] / total)
    n_val = round(n * ratio[1] / total)
    return n_train, n_val, n - n_train - n_val


def assign_splits(records, seed=0):
    """Partition by patient 7:1:2 with a seeded shuffle of the patient ids."""
    patients = sorted({r.patient for r in records})
    order = np.random.default_rng(seed).permutation(len(patients))
    n_train, n_val, _ = split_counts(len(patients))
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[patients[idx]] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    for r in records:
        r.split = split_of[r.patient]
    return records


@dataclass
class Example:
    id: str
    bundle: FeatureBundle
    tokens: list
    refs: list


def load_examples(manifest_path, vocab, max_len, split=None, expected_dim=None):
    """Examples for one split; feature paths resolve relative to the manifest."""
    manifest_path = Path(manifest_path)
    out = []
    for rec in read_manifest(manifest_path):
        if split is not None and rec.split != split:
            continue
        fpath = Path(rec.feature_path)
        if not fpath.is_absolute():
            fpath = manifest_path.parent / fpath
        tokens = vocab.encode(rec.report, max_len)
        out.append(Example(rec.id, load_features(fpath, expected_dim), tokens, [content(tokens)]))
    return out


# ------------------------------------------------------------------ toy corpus

def make_toy_corpus(out_dir, n_examples=10, vocab_size=20, n_regions=4, d_raw=16, seed=0, report_len=3,
                    noise=0.05):
    """Synthetic corpus whose reports are a fixed function of the features.

    Each report has ``report_len`` slots; slot ``s`` draws one word from its
    own group and region ``r`` carries the code vector of slot ``r % report_len``.
    """
    n_words = vocab_size - 4
    if n_examples < 1 or n_words < report_len:
        raise ContractError("toy corpus needs >= 1 example and at least one word per slot")
    rng = np.random.default_rng(seed)
    words = [f"w{i:02d}" for i in range(n_words)]
    groups = [words[s::report_len] for s in range(report_len)]
    codes = [rng.normal(size=(len(g), d_raw)) for g in groups]
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_examples):
        choice = [int(rng.integers(len(g))) for g in groups]
        regional = np.stack([codes[r % report_len][choice[r % report_len]] for r in range(n_regions)])
        regional = regional + noise * rng.normal(size=regional.shape)
        rid = f"toy{i:05d}"
        rel = f"features/{rid}.hrmf"
        write_features(out_dir / rel, regional)
        report = " ".join(groups[s][choice[s]] for s in range(report_len))
        records.append(CorpusRecord(rid, rel, report, patient=f"p{i:05d}"))
    assign_splits(records, seed)
    write_manifest(out_dir / "manifest.jsonl", records)
    return out_dir


# ------------------------------------------------------------------ config

def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg[key] = value
    return cfg
