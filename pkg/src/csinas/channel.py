"""Synthetic multipath scenes in the angular-delay domain.

Each sample is a ULA/OFDM channel built from L discrete paths, transformed
with unitary DFTs across antennas and subcarriers, truncated to the first
``n_delay`` delay bins and split into real/imag planes. PAS/PDP and power
spectral entropy quantify how compressible a scene is.
"""

from __future__ import annotations

import io
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

DATASET_MAGIC = b"CSID"
DATASET_VERSION = 1


@dataclass
class ScenarioConfig:
    n_antennas: int = 32
    n_subcarriers: int = 512
    n_delay: int = 32
    n_paths: int = 5
    carrier_freq: float = 2.655e9
    bandwidth: float = 20e6
    antenna_spacing: float | None = None  # meters; None -> half wavelength at carrier
    angle_spread_deg: float = 30.0
    mean_angle_range_deg: float = 120.0
    max_delay: float = 1.0e-6
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not 1 <= self.n_delay <= self.n_subcarriers:
            raise ValueError(f"need 1 <= n_delay <= n_subcarriers, got {self.n_delay} > {self.n_subcarriers}")
        if self.spacing <= 0:
            raise ValueError("antenna spacing must be positive")
        if self.max_delay < 0:
            raise ValueError("max_delay must be non-negative")

    @property
    def spacing(self) -> float:
        if self.antenna_spacing is None:
            return SPEED_OF_LIGHT / self.carrier_freq / 2
        return self.antenna_spacing

    def subcarrier_freqs(self) -> np.ndarray:
        df = self.bandwidth / self.n_subcarriers
        return self.carrier_freq + (np.arange(self.n_subcarriers) - self.n_subcarriers // 2) * df

    def to_dict(self) -> dict:
        return asdict(self)


# Sparse open scene vs. rich-scattering scene; path counts follow the
# cluster numbers of the two simulated urban scenes.
PRESETS: dict[str, dict] = {
    "park": dict(n_paths=5, angle_spread_deg=30.0, name="park"),
    "commercial": dict(n_paths=20, angle_spread_deg=150.0, name="commercial"),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown scenario preset {name!r}; choose from {sorted(PRESETS)}")
    return ScenarioConfig(**{**PRESETS[name], **overrides})


@dataclass
class PathRealization:
    amplitudes: np.ndarray
    phases: np.ndarray
    delays: np.ndarray
    aods: np.ndarray  # radians

    def __len__(self) -> int:
        return len(self.amplitudes)


def sample_paths(cfg: ScenarioConfig, rng: np.random.Generator) -> PathRealization:
    """Draw one scene realization.

    Delays are uniform on [0, max_delay]; amplitudes follow an exponential
    power-delay decay with constant max_delay/3, normalized to unit total
    power; AoDs are uniform in a sector of width ``angle_spread_deg`` around
    a per-sample mean angle.
    """
    L = cfg.n_paths
    delays = rng.uniform(0.0, cfg.max_delay, size=L)
    phases = rng.uniform(0.0, 2 * np.pi, size=L)
    half_range = np.deg2rad(cfg.mean_angle_range_deg) / 2
    center = rng.uniform(-half_range, half_range)
    half_spread = np.deg2rad(cfg.angle_spread_deg) / 2
    aods = center + rng.uniform(-half_spread, half_spread, size=L)
    tau0 = cfg.max_delay / 3 if cfg.max_delay > 0 else 1.0
    amps = np.exp(-delays / tau0)
    amps /= np.sqrt(np.sum(amps**2))
    return PathRealization(amps, phases, delays, aods)


def array_response(phi: float, omega: float, n_antennas: int) -> np.ndarray:
    """ULA response: (1/N_t) * exp(-j * omega * m * sin(phi)), m = 0..N_t-1."""
    m = np.arange(n_antennas)
    return np.exp(-1j * omega * m * np.sin(phi)) / n_antennas


def synth_freq_response(paths: PathRealization, cfg: ScenarioConfig) -> np.ndarray:
    """Spatial-frequency channel H_SF of shape (n_antennas, n_subcarriers)."""
    f = cfg.subcarrier_freqs()  # (Nf,)
    omega = 2 * np.pi * cfg.spacing * f / SPEED_OF_LIGHT  # (Nf,)
    m = np.arange(cfg.n_antennas)[:, None, None]  # (Nt,1,1)
    sin_phi = np.sin(paths.aods)[None, None, :]  # (1,1,L)
    # conj of the array response -> +j
    resp = np.exp(1j * omega[None, :, None] * m * sin_phi) / cfg.n_antennas  # (Nt,Nf,L)
    gains = paths.amplitudes * np.exp(1j * (paths.phases[None, :] - 2 * np.pi * f[:, None] * paths.delays[None, :]))
    return np.einsum("tfl,fl->tf", resp, gains)


def to_angular_delay(h_sf: np.ndarray, n_delay: int) -> np.ndarray:
    """Unitary 2-D DFT to the angular-delay domain, keeping the first ``n_delay`` delay bins.

    The subcarrier transform uses the positive-exponent kernel so a path of
    delay tau lands in bin ~ tau * bandwidth rather than wrapping to the end.
    """
    n_t, n_f = h_sf.shape
    if n_delay > n_f:
        raise ValueError(f"cannot keep {n_delay} delay bins out of {n_f} subcarriers")
    h = np.fft.fft(h_sf, axis=0, norm="ortho")
    h = np.fft.ifft(h, axis=1, norm="ortho")
    return h[:, :n_delay]


def pas_pdp(h_ad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-antenna (PAS, length N_t) and per-delay (PDP, length N_c) mean powers."""
    p = np.abs(h_ad) ** 2
    return p.mean(axis=1), p.mean(axis=0)


def pse(v: np.ndarray) -> float:
    """Power spectral entropy of ``v``, normalized to [0, 1] by log2(K)."""
    p = np.abs(np.asarray(v).reshape(-1)) ** 2
    total = p.sum()
    if total == 0:
        raise ValueError("power spectral entropy undefined for an all-zero vector")
    k = p.size
    if k == 1:
        return 0.0
    p = p / total
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum() / np.log2(k))


def sample_rng(seed: int, index: int) -> np.random.Generator:
    # independent per-index substream: serial and parallel generation agree
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def simulate_sample(cfg: ScenarioConfig, index: int) -> np.ndarray:
    """Complex angular-delay matrix (n_antennas, n_delay) for sample ``index``."""
    paths = sample_paths(cfg, sample_rng(cfg.seed, index))
    return to_angular_delay(synth_freq_response(paths, cfg), cfg.n_delay)


@dataclass
class CsiDataset:
    """Normalized real-valued channel images, shape (count, N_t, N_c, 2).

    ``lo``/``hi`` are the dataset-wide extremes mapped to 0 and 1.
    """

    data: np.ndarray
    lo: float
    hi: float
    scenario: str = ""
    raw: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[-1] != 2:
            raise ValueError(f"dataset array must be (count, N_t, N_c, 2), got {self.data.shape}")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def subset(self, idx) -> "CsiDataset":
        raw = None if self.raw is None else self.raw[idx]
        return CsiDataset(self.data[idx], self.lo, self.hi, self.scenario, raw)

    def denormalize(self, h: np.ndarray) -> np.ndarray:
        return self.lo + h * (self.hi - self.lo)

    def complex_samples(self) -> np.ndarray:
        """Angular-delay matrices recovered from the normalized data."""
        if self.raw is not None:
            return self.raw
        x = self.denormalize(self.data)
        return x[..., 0] + 1j * x[..., 1]


def generate_dataset(cfg: ScenarioConfig, count: int, keep_raw: bool = True) -> CsiDataset:
    if count < 1:
        raise ValueError("count must be >= 1")
    raw = np.stack([simulate_sample(cfg, i) for i in range(count)])
    real = np.stack([raw.real, raw.imag], axis=-1)
    lo, hi = float(real.min()), float(real.max())
    if hi <= lo:
        raise ValueError("degenerate dataset: all values equal, cannot normalize")
    data = (real - lo) / (hi - lo)
    return CsiDataset(data, lo, hi, cfg.name, raw if keep_raw else None)


def write_dataset(ds: CsiDataset, path: str | Path) -> None:
    """Little-endian CSID file; values stored as float32."""
    n_t, n_c = ds.dims
    name = ds.scenario.encode("utf-8")
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<IIIQdd", DATASET_VERSION, n_t, n_c, len(ds), ds.lo, ds.hi))
    buf.write(struct.pack("<I", len(name)))
    buf.write(name)
    buf.write(np.ascontiguousarray(ds.data, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_dataset(path: str | Path) -> CsiDataset:
    blob = Path(path).read_bytes()
    head = 4 + struct.calcsize("<IIIQdd") + 4
    if len(blob) < head or blob[:4] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a CSID dataset file")
    version, n_t, n_c, count, lo, hi = struct.unpack_from("<IIIQdd", blob, 4)
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    off = 4 + struct.calcsize("<IIIQdd")
    (name_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    name = blob[off : off + name_len].decode("utf-8")
    off += name_len
    if count == 0:
        raise ValueError(f"{path}: dataset is empty")
    n_vals = count * n_t * n_c * 2
    if len(blob) - off != 4 * n_vals:
        raise ValueError(f"{path}: expected {n_vals} values, file holds {(len(blob) - off) // 4}")
    data = np.frombuffer(blob, dtype="<f4", count=n_vals, offset=off).astype(np.float64)
    return CsiDataset(data.reshape(count, n_t, n_c, 2), lo, hi, name)
