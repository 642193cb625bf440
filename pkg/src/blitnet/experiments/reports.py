"""Machine-readable experiment outputs: CSV, JSON, PGM, run manifests."""

import csv
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_coerce)
        fh.write("\n")
    return path


def _coerce(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_pgm(path, image):
    """8-bit binary PGM (P5). The image is rescaled to use the full
    0..255 range; an all-zero image stays black."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"PGM image must be 2-d, got shape {img.shape}")
    peak = img.max()
    scaled = (img / peak * 255.0) if peak > 0 else img
    data = np.clip(np.round(scaled), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())
    return path


def read_pgm(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"not a binary PGM: magic {magic!r}")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        width, height = (int(v) for v in line.split())
        maxval = int(fh.readline())
        data = np.frombuffer(fh.read(width * height), dtype=np.uint8)
    return data.reshape(height, width), maxval


class Manifest:
    """Reproducibility record: command, config echo, seed, versions,
    wall time. Written next to every run's reports."""

    def __init__(self, command, config, seed):
        self.payload = {
            "command": command,
            "config": config,
            "seed": seed,
            "argv": sys.argv,
            "python": sys.version.split()[0],
            "platform": platform.platform(),
            "versions": _versions(),
            "started_unix": time.time(),
        }
        self._t0 = time.perf_counter()

    def write(self, out_dir):
        self.payload["wall_seconds"] = round(time.perf_counter() - self._t0, 3)
        return write_json(Path(out_dir) / "manifest.json", self.payload)


def _versions():
    import numpy
    import scipy
    out = {"numpy": numpy.__version__, "scipy": scipy.__version__}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:
        pass
    return out
