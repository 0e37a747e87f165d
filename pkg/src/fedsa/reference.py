"""Reference checkpoints the attacker steers toward.

On disk a library is a directory with one ``<id>.f64`` file per checkpoint
(flat little-endian float64) and ``manifest.txt``::

    # fedsa reference library v1
    # id accuracy r
    ckpt0003 0.81299999999999994 25450
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

HEADER = "# fedsa reference library v1"


@dataclass
class ReferenceLibrary:
    checkpoints: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.checkpoints)

    def add(self, params: np.ndarray, accuracy: float) -> None:
        self.checkpoints.append((np.array(params, dtype=np.float64), float(accuracy)))

    def nearest(self, target_acc: float) -> tuple[np.ndarray, float]:
        """Checkpoint with accuracy closest to ``target_acc``; earlier wins ties."""
        if not self.checkpoints:
            raise ConfigError("reference library is empty")
        best = min(range(len(self.checkpoints)), key=lambda i: (abs(self.checkpoints[i][1] - target_acc), i))
        return self.checkpoints[best]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        lines = [HEADER, "# id accuracy r"]
        for i, (w, acc) in enumerate(self.checkpoints):
            cid = f"ckpt{i:04d}"
            w.astype("<f8").tofile(d / f"{cid}.f64")
            lines.append(f"{cid} {acc!r} {w.size}")
        (d / "manifest.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory) -> "ReferenceLibrary":
        d = Path(directory)
        manifest = d / "manifest.txt"
        if not manifest.exists():
            raise ConfigError(f"no manifest.txt in {d}")
        lib = cls()
        for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"{manifest}:{lineno}: expected 'id accuracy r'")
            cid, acc, r = parts[0], float(parts[1]), int(parts[2])
            path = d / f"{cid}.f64"
            w = np.fromfile(path, dtype="<f8")
            if w.size != r:
                raise FormatError(f"{path}: {w.size} values, manifest says {r}", offset=w.size * 8)
            lib.add(w, acc)
        return lib
