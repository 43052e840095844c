"""Discrete decoders built from a genotype: training from scratch, test NMSE,
complexity accounting and selection of the best candidate."""

from __future__ import annotations

import csv
import io
import logging
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .genotype import Genotype
from .nn import Conv2d, Module
from .ops import Operator, op_flops, op_param_count
from .optim import Adam
from .search import FeedbackData, Head, Stem, denorm_nmse
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"CSWT"
WEIGHTS_VERSION = 1


@dataclass
class ArchitectureConfig:
    n_cells: int = 2
    width: int = 7
    residual: bool = True
    epochs: int = 200
    lr: float = 1e-3
    lr_decay: float = 0.97
    batch_size: int = 64
    op_relu: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class EvalCell(Module):
    """One genotype cell with its own weights.

    Each inner node sums its two branches; the inner nodes are concatenated,
    projected back to ``width`` by a 1x1 conv, optionally added to the k-1
    input, then passed through ReLU.
    """

    def __init__(self, genotype: Genotype, width: int, rng, residual: bool, relu: bool):
        self.genotype = genotype
        self.residual = residual
        self.branches = [Operator(op, width, rng, relu=relu) for node in genotype.nodes for op, _ in node]
        self.project = Conv2d(genotype.num_nodes * width, width, (1, 1), rng)

    def __call__(self, s0: Tensor, s1: Tensor) -> Tensor:
        states = [s0, s1]
        b = 0
        for node in self.genotype.nodes:
            (_, i0), (_, i1) = node
            x = ag.add(self.branches[b](states[i0]), self.branches[b + 1](states[i1]))
            b += 2
            states.append(x)
        out = self.project(ag.concat(states[2:], axis=1))
        if self.residual:
            out = ag.add(out, s1)
        return ag.relu(out)


class SubNetwork(Module):
    def __init__(self, genotype: Genotype, cfg: ArchitectureConfig, m: int, dims: tuple[int, int], rng=None):
        problems = genotype.violations()
        if problems:
            raise ValueError("genotype is not a legal cell: " + "; ".join(problems))
        rng = rng_for(cfg.seed, "subnet-init", genotype.to_json()) if rng is None else rng
        self.genotype = genotype
        self.stem = Stem(m, dims, cfg.width, rng)
        self.cells = [EvalCell(genotype, cfg.width, rng, cfg.residual, cfg.op_relu) for _ in range(cfg.n_cells)]
        self.head = Head(cfg.width, rng)

    def __call__(self, s: Tensor) -> Tensor:
        s0 = s1 = self.stem(s)
        for cell in self.cells:
            s0, s1 = s1, cell(s0, s1)
        return self.head(s1)

    def predict(self, s: np.ndarray, batch: int = 256) -> np.ndarray:
        with ag.no_grad():
            return np.concatenate([self(Tensor(s[i : i + batch])).data for i in range(0, len(s), batch)])


def build_subnetwork(genotype: Genotype, cfg: ArchitectureConfig, m: int, dims: tuple[int, int]) -> SubNetwork:
    return SubNetwork(genotype, cfg, m, dims)


@dataclass
class TrainResult:
    network: SubNetwork
    curve: list[float]
    nmse_linear: float
    nmse_db: float
    seconds: float


def train_from_scratch(net: SubNetwork, data: FeedbackData, cfg: ArchitectureConfig, seed: int | None = None) -> TrainResult:
    """Adam on the merged training splits with lr * decay^epoch; returns the
    per-epoch mean training loss and the test-split NMSE."""
    if not data.codec.calibrated:
        raise ValueError("codec quantizer is not calibrated")
    t0 = time.perf_counter()
    s, h = data.merged_train()
    opt = Adam(net.parameters(), cfg.lr, cfg.lr_decay)
    shuffle = rng_for(cfg.seed if seed is None else seed, "train-shuffle")
    curve = []
    for epoch in range(cfg.epochs):
        opt.set_epoch(epoch)
        order = shuffle.permutation(len(s))
        losses = []
        for start in range(0, len(s), cfg.batch_size):
            ib = order[start : start + cfg.batch_size]
            opt.zero_grad()
            loss = ag.mse(net(Tensor(s[ib])), Tensor(h[ib]))
            loss.backward()
            opt.step()
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
    lin, db = evaluate_nmse(net, data)
    return TrainResult(net, curve, lin, db, time.perf_counter() - t0)


def evaluate_nmse(net: SubNetwork, data: FeedbackData, split: str = "test") -> tuple[float, float]:
    s, h = data.split(split)
    return denorm_nmse(net.predict(s), h, data.lo, data.hi)


def cell_complexity(genotype: Genotype, c: int, h: int, w: int) -> tuple[int, int]:
    """(FLOPs, params) of one cell: its branch operators plus the concat -> c
    1x1 projection. FLOPs are 2 * MACs; biases count as parameters only."""
    flops = params = 0
    for node in genotype.nodes:
        for op, _ in node:
            flops += op_flops(op, c, h, w)
            params += op_param_count(op, c)
    n_cat = genotype.num_nodes * c
    flops += 2 * n_cat * c * h * w
    params += n_cat * c + c
    return flops, params


# ---------------------------------------------------------------- selection


@dataclass
class EvalRow:
    genotype: Genotype
    nmse_linear: float
    nmse_db: float
    cell_flops: int
    cell_params: int
    epochs: int
    seconds: float
    curve: list[float] = field(default_factory=list, repr=False)
    weights: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def genotype_id(self) -> str:
        return self.genotype.id


REPORT_COLUMNS = ("genotype_id", "nmse_linear", "nmse_db", "cell_flops", "cell_params", "epochs", "seconds")


def candidate_seed(base: int, genotype: Genotype) -> int:
    return derive_seed(base, "candidate", genotype.to_json())


def evaluate_candidate(genotype: Genotype, data: FeedbackData, cfg: ArchitectureConfig) -> EvalRow:
    seed = candidate_seed(cfg.seed, genotype)
    net = SubNetwork(genotype, cfg, data.codec.M, data.dims, rng_for(seed, "init"))
    res = train_from_scratch(net, data, cfg, seed)
    flops, params = cell_complexity(genotype, cfg.width, *data.dims)
    log.info("%s %s: %.3f dB in %.1fs", genotype.id, genotype.describe(), res.nmse_db, res.seconds)
    return EvalRow(genotype, res.nmse_linear, res.nmse_db, flops, params, cfg.epochs, res.seconds, res.curve, net.state_dict())


def _evaluate_packed(args):
    g_dict, data, cfg = args
    return evaluate_candidate(Genotype.from_dict(g_dict), data, cfg)


def evaluate_candidates(
    genotypes: Sequence[Genotype], data: FeedbackData, cfg: ArchitectureConfig, jobs: int = 1
) -> list[EvalRow]:
    """Retrain each genotype from scratch; results come back in input order."""
    if jobs <= 1 or len(genotypes) <= 1:
        return [evaluate_candidate(g, data, cfg) for g in genotypes]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_evaluate_packed, [(g.to_dict(), data, cfg) for g in genotypes]))


def select_best(
    genotypes: Sequence[Genotype], data: FeedbackData, cfg: ArchitectureConfig, jobs: int = 1
) -> tuple[EvalRow, list[EvalRow]]:
    """Retrain every candidate and return (winner, full report); the winner is
    the first row attaining the minimum linear NMSE."""
    if not genotypes:
        raise ValueError("candidate set is empty")
    rows = evaluate_candidates(genotypes, data, cfg, jobs)
    return argmin_row(rows), rows


def argmin_row(rows: Sequence[EvalRow]) -> EvalRow:
    return min(rows, key=lambda r: r.nmse_linear)


# ---------------------------------------------------------------- files


def report_csv(rows: Sequence[EvalRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([r.genotype_id, repr(r.nmse_linear), repr(r.nmse_db), r.cell_flops, r.cell_params, r.epochs, f"{r.seconds:.3f}"])
    return buf.getvalue()


def read_report(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["nmse_linear"] = float(r["nmse_linear"])
        r["nmse_db"] = float(r["nmse_db"])
    return rows


def write_weights(state: dict[str, np.ndarray], path: str | Path) -> None:
    """CSWT file: magic, version and count, then per tensor a name, its shape and f64 data."""
    buf = io.BytesIO()
    buf.write(WEIGHTS_MAGIC)
    buf.write(struct.pack("<II", WEIGHTS_VERSION, len(state)))
    for name, arr in state.items():
        key = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(struct.pack("<I", len(key)) + key)
        buf.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_weights(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != WEIGHTS_MAGIC:
        raise ValueError(f"{path}: not a CSWT weights file")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != WEIGHTS_VERSION:
        raise ValueError(f"{path}: unsupported weights version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, off)
            name = blob[off + 4 : off + 4 + n].decode("utf-8")
            off += 4 + n
            (ndim,) = struct.unpack_from("<I", blob, off)
            shape = struct.unpack_from(f"<{ndim}Q", blob, off + 4)
            off += 4 + 8 * ndim
            size = math.prod(shape)
            if off + 8 * size > len(blob):
                raise ValueError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
    except struct.error as exc:
        raise ValueError(f"{path}: truncated weights file") from exc
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    return out
