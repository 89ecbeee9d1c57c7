"""Prediction loss, feature maps and PGM/CSV exports."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._numeric import sigmoid
from .errors import DimensionError

__all__ = [
    "LossReport",
    "FeatureMap",
    "prediction_loss",
    "feature_map",
    "rule_figure",
    "export_frames",
    "to_bytes",
    "write_pgm",
    "read_pgm",
    "write_curve_csv",
    "read_curve_csv",
]


@dataclass(frozen=True)
class LossReport:
    mean_loss: float
    per_sequence: tuple
    n: int
    t_split: tuple


@dataclass(frozen=True)
class FeatureMap:
    unit: int
    pixels: np.ndarray


def prediction_loss(truth, pred, T, T_end):
    """Squared error summed over pixels, averaged over frames ``T..T_end-1`` then over sequences.

    Arrays are (N, L, V) with 0-based frame indices, so the first ``T`` frames
    are the given input and the following ``T_end - T`` are scored.
    """
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise DimensionError("prediction", truth.shape, pred.shape)
    if truth.ndim != 3:
        raise ValueError(f"expected (N, L, V) arrays, got shape {truth.shape}")
    if not 0 <= T < T_end <= truth.shape[1]:
        raise ValueError(f"invalid split T={T}, T'={T_end} for sequences of length {truth.shape[1]}")
    err = (truth[:, T:T_end] - pred[:, T:T_end]) ** 2
    per_seq = err.sum(axis=2).mean(axis=1)
    return LossReport(float(per_seq.mean()), tuple(float(x) for x in per_seq), truth.shape[0], (T, T_end))


def feature_map(params, unit):
    """Display transform sigmoid(w[:, unit] + b) of one hidden unit."""
    if not 0 <= unit < params.n_hidden:
        raise IndexError(f"hidden unit {unit} out of range [0, {params.n_hidden})")
    return FeatureMap(unit, sigmoid(params.w[:, unit] + params.b))


def to_bytes(frame):
    """Quantise to 8 bits: round(255 * clamp(v, 0, 1)) with halves rounded up."""
    v = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def _square_side(n):
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise DimensionError("frame pixels (square)", side * side, n)
    return side


def write_pgm(path, frame, width=None):
    frame = np.asarray(frame)
    if frame.ndim == 2:
        height, width = frame.shape
    else:
        width = _square_side(frame.size) if width is None else width
        height = frame.size // width
    data = to_bytes(frame).reshape(height, width)
    try:
        with open(path, "wb") as f:
            f.write(b"P5\n%d %d\n255\n" % (width, height))
            f.write(data.tobytes())
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror}") from e
    return Path(path)


def read_pgm(path):
    """Read an 8-bit binary PGM written by :func:`write_pgm`; returns a (H, W) uint8 array."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P5 PGM")
    width, height = int(parts[1]), int(parts[2])
    pixels = raw[len(raw) - width * height:]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def export_frames(seq, out_dir, format="pgm"):
    """Write each frame of ``seq`` (L, V) as ``frame_0000.pgm`` ... in ``out_dir``."""
    if format != "pgm":
        raise ValueError(f"unsupported format {format!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [write_pgm(out_dir / f"frame_{t:04d}.pgm", frame) for t, frame in enumerate(np.asarray(seq))]


def rule_figure(params, rule, out_dir):
    """Feature maps for the positive body literals and the head of ``rule``, plus ``manifest.txt``."""
    from .rules import format_rule

    if len(rule.body) != params.n_hidden:
        raise DimensionError("rule body width", params.n_hidden, len(rule.body))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    positive = [lit.unit for lit in rule.body if not lit.negated]
    written = []
    for j in positive:
        written.append(write_pgm(out_dir / f"body_h{j}.pgm", feature_map(params, j).pixels))
    written.append(write_pgm(out_dir / f"head_h{rule.head.unit}.pgm", feature_map(params, rule.head.unit).pixels))
    lines = [format_rule(rule)]
    if positive:
        lines.append("body: " + " ".join(f"body_h{j}.pgm" for j in positive))
    else:
        lines.append("body: (no positive literals)")
    lines.append(f"head: head_h{rule.head.unit}.pgm")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(manifest)
    return written


def write_curve_csv(path, curve):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("epoch,loss\n")
        for epoch, loss in enumerate(curve):
            f.write(f"{epoch},{loss:.6f}\n")


def read_curve_csv(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [float(line.split(",")[1]) for line in lines[1:] if line]
