"""Synthetic sequence tasks and the raw binary sequence loader."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Dataset:
    u: np.ndarray       # (count, L, n_in)
    labels: np.ndarray  # (count,)

    def __len__(self):
        return len(self.labels)

    def split(self, *fractions):
        """Consecutive splits by fraction; the remainder goes to the last part."""
        bounds = np.cumsum([int(round(f * len(self))) for f in fractions])
        edges = [0, *bounds.tolist(), len(self)]
        return [Dataset(self.u[a:b], self.labels[a:b]) for a, b in zip(edges[:-1], edges[1:])]


def _balanced_labels(count, rng):
    labels = np.arange(count) % 2
    return rng.permutation(labels)


def gen_delayed_recall(count: int, L: int, delay: int, seed: int) -> Dataset:
    """Label is 1 iff ``u[L-1-delay] > 0``; ``u`` is i.i.d. uniform(-1, 1).

    Labels are exactly balanced for even ``count``: the sign of the probed
    element is assigned from a shuffled balanced label vector.
    """
    if not 0 <= delay < L:
        raise ValueError(f"delay must satisfy 0 <= delay < L, got delay={delay}, L={L}")
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, (count, L))
    labels = _balanced_labels(count, rng)
    pos = L - 1 - delay
    mag = np.abs(u[:, pos])
    mag[mag == 0] = 0.5
    u[:, pos] = np.where(labels == 1, mag, -mag)
    return Dataset(u[:, :, None], labels.astype(np.int64))


def delayed_recall_label(u, delay: int) -> int:
    u = np.asarray(u).reshape(len(u), -1)[:, 0]
    return int(u[len(u) - 1 - delay] > 0)


def gen_two_tone(count: int, L: int = 1024, f0: float = 0.05, f1: float = 0.08,
                 snr_db: float = 10.0, seed: int = 0) -> Dataset:
    """Class ``k`` is ``sin(2 pi f_k t + phi)`` with random phase plus white Gaussian noise.

    ``snr_db=inf`` gives clean tones. Frequencies are in cycles per step.
    """
    for f in (f0, f1):
        if not 0 < f < 0.5:
            raise ValueError(f"frequencies must lie in (0, 0.5), got {f}")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(count, rng)
    phase = rng.uniform(0.0, 2 * np.pi, count)
    t = np.arange(L)
    freq = np.where(labels == 1, f1, f0)
    u = np.sin(2 * np.pi * freq[:, None] * t[None, :] + phase[:, None])
    if np.isfinite(snr_db):
        sigma = np.sqrt(0.5 / 10 ** (snr_db / 10))
        u = u + sigma * rng.standard_normal(u.shape)
    return Dataset(u[:, :, None], labels.astype(np.int64))


# ----------------------------------------------------------------------------
# raw format: manifest.csv (file,length,channels,label) + float32 little-endian files

MANIFEST_HEADER = ("file", "length", "channels", "label")


def write_raw(directory, data: Dataset, manifest_name: str = "manifest.csv") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / manifest_name
    with manifest.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for i, (u, label) in enumerate(zip(data.u, data.labels)):
            fname = f"seq_{i:06d}.f32"
            (directory / fname).write_bytes(np.ascontiguousarray(u, dtype="<f4").tobytes())
            w.writerow((fname, u.shape[0], u.shape[1], int(label)))
    return manifest


def load_raw(manifest_path) -> Dataset:
    """Load sequences listed in a manifest CSV; files are resolved next to the manifest."""
    manifest_path = Path(manifest_path)
    seqs, labels = [], []
    with manifest_path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
            raise ValueError(f"{manifest_path}: header must be {','.join(MANIFEST_HEADER)}")
        for row in reader:
            length, channels = int(row["length"]), int(row["channels"])
            path = manifest_path.parent / row["file"]
            raw = path.read_bytes()
            if len(raw) != 4 * length * channels:
                raise ValueError(f"{row['file']}: expected {4 * length * channels} bytes "
                                 f"for {length}x{channels} float32, found {len(raw)}")
            seqs.append(np.frombuffer(raw, dtype="<f4").reshape(length, channels))
            labels.append(int(row["label"]))
    if not seqs:
        return Dataset(np.zeros((0, 0, 0), dtype=np.float32), np.zeros(0, dtype=np.int64))
    if len({s.shape for s in seqs}) != 1:
        raise ValueError(f"{manifest_path}: sequences must share one shape")
    return Dataset(np.stack(seqs), np.asarray(labels, dtype=np.int64))
