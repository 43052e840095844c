"""Encoder side of the feedback link: random projection, uniform quantizer,
NMSE and dataset splitting."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

CODEC_MAGIC = b"CSCX"
_HEADER = "<IIIQdd"


@dataclass(frozen=True)
class ProjectionCodec:
    A: np.ndarray
    bits: int = 8
    seed: int = 0
    q_lo: float = math.nan
    q_hi: float = math.nan

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]

    @property
    def calibrated(self) -> bool:
        return bool(self.q_lo < self.q_hi)

    @property
    def levels(self) -> int:
        return 2**self.bits - 1

    @property
    def step(self) -> float:
        return (self.q_hi - self.q_lo) / self.levels


def codeword_length(n: int, cr: float) -> int:
    if not 0 < cr < 1:
        raise ValueError(f"compression ratio must lie in (0, 1), got {cr}")
    m = int(math.floor(n * cr + 0.5))
    if not 1 <= m < n:
        raise ValueError(f"CR={cr} gives codeword length {m} for N={n}")
    return m


def make_projection(n: int, cr: float, seed: int = 0, bits: int = 8) -> ProjectionCodec:
    """Gaussian sensing matrix with i.i.d. N(0, 1/M) entries, M = round(N * CR)."""
    if bits < 1:
        raise ValueError("quantizer needs at least one bit")
    m = codeword_length(n, cr)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n)) / math.sqrt(m)
    return ProjectionCodec(A=A, bits=bits, seed=seed)


def compress(codec: ProjectionCodec, h: np.ndarray) -> np.ndarray:
    """s = A vec(h). ``h`` is one sample or a batch; vec order is row-major storage order."""
    h = np.asarray(h, dtype=np.float64)
    if h.size == codec.N:
        return codec.A @ h.reshape(-1)
    flat = h.reshape(h.shape[0], -1)
    if flat.shape[1] != codec.N:
        raise ValueError(f"vec(H) has length {flat.shape[1]}, codec expects N={codec.N}")
    return flat @ codec.A.T


def calibrate_quantizer(codec: ProjectionCodec, codewords: np.ndarray) -> ProjectionCodec:
    codewords = np.asarray(codewords, dtype=np.float64)
    if codewords.size == 0:
        raise ValueError("cannot calibrate the quantizer on zero codewords")
    lo, hi = float(codewords.min()), float(codewords.max())
    if not lo < hi:
        raise ValueError(f"degenerate quantizer range [{lo}, {hi}]")
    return replace(codec, q_lo=lo, q_hi=hi)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(codec: ProjectionCodec, s: np.ndarray) -> np.ndarray:
    """Integer codes in [0, 2^B - 1]; out-of-range values clamp."""
    if not codec.calibrated:
        raise ValueError("quantizer range not calibrated")
    s = np.asarray(s, dtype=np.float64)
    u = (s - codec.q_lo) / (codec.q_hi - codec.q_lo) * codec.levels
    code = np.clip(_round_half_away(u), 0, codec.levels)
    return code.astype(np.uint64 if codec.bits > 52 else np.int64)


def dequantize(codec: ProjectionCodec, codes: np.ndarray) -> np.ndarray:
    if not codec.calibrated:
        raise ValueError("quantizer range not calibrated")
    return codec.q_lo + np.asarray(codes, dtype=np.float64) * codec.step


def roundtrip(codec: ProjectionCodec, h: np.ndarray) -> np.ndarray:
    """Decoder input s_d = Deq(Qua(A vec(H)))."""
    return dequantize(codec, quantize(codec, compress(codec, h)))


def nmse(h_true: np.ndarray, h_hat: np.ndarray) -> tuple[float, float]:
    """Mean over samples of ||H - H_hat||^2 / ||H||^2, as (linear, dB).

    A perfect reconstruction returns -inf dB.
    """
    h_true = np.asarray(h_true, dtype=np.float64)
    h_hat = np.asarray(h_hat, dtype=np.float64)
    if h_true.shape != h_hat.shape:
        raise ValueError(f"shape mismatch {h_true.shape} vs {h_hat.shape}")
    t = h_true.reshape(h_true.shape[0], -1)
    e = t - h_hat.reshape(t.shape)
    power = np.einsum("ij,ij->i", t, t)
    if np.any(power == 0):
        raise ValueError("NMSE undefined: a reference sample is all zeros")
    lin = float(np.mean(np.einsum("ij,ij->i", e, e) / power))
    return lin, to_db(lin)


def to_db(lin: float) -> float:
    return 10.0 * math.log10(lin) if lin > 0 else -math.inf


def format_db(db: float) -> str:
    return "-inf" if db == -math.inf else f"{db:.6f}"


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    ratios = [float(r) for r in ratios]
    if any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    sizes = [int(math.floor(n * r + 0.5)) for r in ratios[:-1]]
    sizes.append(n - sum(sizes))
    if sizes[-1] < 0:
        raise ValueError(f"cannot split {n} samples by {ratios}")
    return sizes


def split_indices(n: int, ratios: Sequence[float], seed: int) -> list[np.ndarray]:
    """Seeded shuffle of range(n) cut into consecutive parts; the remainder goes to the last part."""
    sizes = split_sizes(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum(sizes)[:-1]
    return np.split(perm, bounds)


def split_dataset(dataset, ratios: Sequence[float], seed: int):
    """Split into (train_omega, train_alpha, test) subsets."""
    return tuple(dataset.subset(np.sort(idx)) for idx in split_indices(len(dataset), ratios, seed))


def write_codec(codec: ProjectionCodec, path: str | Path) -> None:
    head = CODEC_MAGIC + struct.pack(_HEADER, codec.M, codec.N, codec.bits, codec.seed, codec.q_lo, codec.q_hi)
    Path(path).write_bytes(head + np.ascontiguousarray(codec.A, dtype="<f8").tobytes())


def read_codec(path: str | Path) -> ProjectionCodec:
    blob = Path(path).read_bytes()
    if blob[:4] != CODEC_MAGIC:
        raise ValueError(f"{path}: not a CSCX codec file")
    m, n, bits, seed, lo, hi = struct.unpack_from(_HEADER, blob, 4)
    off = 4 + struct.calcsize(_HEADER)
    if len(blob) - off != 8 * m * n:
        raise ValueError(f"{path}: truncated sensing matrix")
    A = np.frombuffer(blob, dtype="<f8", offset=off).reshape(m, n).copy()
    return ProjectionCodec(A=A, bits=bits, seed=seed, q_lo=lo, q_hi=hi)
