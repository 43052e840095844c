"""Continuous-relaxation supernet and the bilevel search loop.

Every edge (i, j) of the cell carries a softmax(alpha)-weighted mixture of all
candidate operators applied to a random 1/K slice of the channels; every inner
node mixes its incoming edges with softmax(beta). Architecture weights and
operator weights are updated alternately on disjoint data splits (first-order
approximation), and genotypes derived at improving epochs are kept as
candidates for retraining.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .channel import CsiDataset
from .codec import (
    ProjectionCodec,
    calibrate_quantizer,
    compress,
    make_projection,
    nmse,
    roundtrip,
    split_indices,
)
from .genotype import Genotype
from .nn import Conv2d, Dense, Module
from .ops import OP_NAMES, Operator, op_index, validate_op_set
from .optim import Adam
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)


@dataclass
class SearchConfig:
    cr: float = 0.25
    n_cells: int = 2
    n_nodes: int = 3
    width: int = 8
    split: tuple[float, float, float] = (0.5, 0.45, 0.05)  # (train_omega, train_alpha, test)
    warmup_epochs: int = 20
    search_epochs: int = 400
    op_set: tuple[str, ...] = OP_NAMES
    arch_lr: float = 6e-4
    weight_lr: float = 3e-4
    weight_lr_decay: float = 0.97
    arch_weight_decay: float = 3e-4
    start_record: int = 20
    max_records: int = 20
    partial_k: int = 4
    batch_size: int = 64
    patience: int = 100
    quant_bits: int = 8
    op_relu: bool = True
    seed: int = 0

    def __post_init__(self):
        self.split = tuple(float(x) for x in self.split)
        self.op_set = validate_op_set(self.op_set)
        if not 0 < self.cr < 1:
            raise ValueError(f"compression ratio must be in (0, 1), got {self.cr}")
        if not 1 <= self.quant_bits <= 32:
            raise ValueError(f"quantizer bits must be in [1, 32], got {self.quant_bits}")
        if len(self.split) != 3 or min(self.split) <= 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ValueError(f"split must be three positive ratios summing to 1, got {self.split}")
        if not self.start_record < self.search_epochs:
            raise ValueError("start_record must be smaller than search_epochs")
        if self.max_records < 1:
            raise ValueError("max_records must be >= 1")
        if self.partial_k < 1 or self.width // self.partial_k < 1:
            raise ValueError(f"partial_k={self.partial_k} leaves no channels of width {self.width}")
        if self.n_nodes < 1 or self.n_cells < 1:
            raise ValueError("need at least one cell and one inner node")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        d["op_set"] = list(self.op_set)
        return d


# ---------------------------------------------------------------- data


@dataclass
class FeedbackData:
    """Decoder inputs and targets for the three splits.

    ``inputs`` are the dequantized codewords s_d shifted by ``in_mean`` and
    divided by ``in_scale`` (both fitted on the training splits); the
    normalized channel sits on a large common offset, so raw codewords bury
    the per-sample content under one shared direction. ``targets`` are channel
    images in (batch, re/im, antenna, delay) layout.
    """

    codec: ProjectionCodec
    indices: dict[str, np.ndarray]
    inputs: dict[str, np.ndarray]
    targets: dict[str, np.ndarray]
    lo: float
    hi: float
    dims: tuple[int, int]
    in_mean: np.ndarray
    in_scale: float

    def decoder_input(self, s_d: np.ndarray) -> np.ndarray:
        return (s_d - self.in_mean) / self.in_scale

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[name], self.targets[name]

    def merged_train(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.concatenate([self.inputs["train_omega"], self.inputs["train_alpha"]]),
            np.concatenate([self.targets["train_omega"], self.targets["train_alpha"]]),
        )


SPLIT_NAMES = ("train_omega", "train_alpha", "test")


def prepare_feedback_data(
    dataset: CsiDataset,
    cr: float,
    bits: int,
    split: Sequence[float],
    seed: int,
    codec: ProjectionCodec | None = None,
) -> FeedbackData:
    """Split, build the sensing matrix, calibrate the quantizer on the training
    codewords and precompute the standardized s_d for every sample."""
    parts = split_indices(len(dataset), split, derive_seed(seed, "split"))
    idx = {name: np.sort(p) for name, p in zip(SPLIT_NAMES, parts)}
    if any(len(v) == 0 for v in idx.values()):
        raise ValueError(f"a split is empty: sizes {[len(v) for v in idx.values()]}")
    n_t, n_c = dataset.dims
    if codec is None:
        codec = make_projection(2 * n_t * n_c, cr, derive_seed(seed, "codec"), bits)
        train = np.concatenate([idx["train_omega"], idx["train_alpha"]])
        codec = calibrate_quantizer(codec, compress(codec, dataset.data[train]))
    s_d = {k: roundtrip(codec, dataset.data[v]) for k, v in idx.items()}
    train_sd = np.concatenate([s_d["train_omega"], s_d["train_alpha"]])
    mean = train_sd.mean(axis=0)
    scale = float((train_sd - mean).std())
    if not scale > 0:
        raise ValueError("training codewords are all identical")
    inputs = {k: (v - mean) / scale for k, v in s_d.items()}
    targets = {k: np.ascontiguousarray(dataset.data[v].transpose(0, 3, 1, 2)) for k, v in idx.items()}
    return FeedbackData(codec, idx, inputs, targets, dataset.lo, dataset.hi, (n_t, n_c), mean, scale)


def denorm_nmse(pred: np.ndarray, target: np.ndarray, lo: float, hi: float) -> tuple[float, float]:
    """NMSE measured on the de-normalized channel (the normalized images sit
    around an offset, which would make the ratio meaningless)."""
    return nmse(lo + target * (hi - lo), lo + pred * (hi - lo))


# ---------------------------------------------------------------- supernet


class MixedEdge(Module):
    def __init__(self, op_set: Sequence[str], channels: int, rng: np.random.Generator, relu: bool):
        self.ops = [Operator(k, channels, rng, relu=relu) for k in op_set]


def mixed_edge_forward(edge: MixedEdge, x: Tensor, alpha: Tensor, k: int, rng: np.random.Generator) -> Tensor:
    """Partial-channel mixed operation.

    A random floor(c/K)-channel subset goes through the softmax(alpha) mixture,
    the rest passes through, channels return to their original slots and the
    result is cyclically rotated by the subset size.
    """
    c = x.shape[1]
    m = c // k
    if m == c:
        return ag.weighted_sum([op(x) for op in edge.ops], ag.softmax(alpha))
    sel = np.sort(rng.choice(c, size=m, replace=False))
    rest = np.setdiff1d(np.arange(c), sel)
    mixed = ag.weighted_sum([op(ag.take_channels(x, sel)) for op in edge.ops], ag.softmax(alpha))
    cat = ag.concat([mixed, ag.take_channels(x, rest)], axis=1)
    pos = np.argsort(np.concatenate([sel, rest]))
    return ag.take_channels(cat, pos[(np.arange(c) - m) % c])


def node_forward(edge_outputs: Sequence[Tensor], beta: Tensor) -> Tensor:
    """Edge-normalized sum of a node's incoming edge outputs."""
    return ag.weighted_sum(list(edge_outputs), ag.softmax(beta))


def cell_edges(n_nodes: int) -> list[tuple[int, int]]:
    """(input_index, node) pairs; node j's inputs are 0 .. j+1."""
    return [(i, j) for j in range(n_nodes) for i in range(j + 2)]


class SearchCell(Module):
    def __init__(self, n_nodes: int, width: int, op_set, k: int, rng, relu: bool):
        self.n_nodes, self.width, self.k = n_nodes, width, k
        self.edges = [MixedEdge(op_set, width // k, rng, relu) for _ in cell_edges(n_nodes)]
        self.project = Conv2d(n_nodes * width, width, (1, 1), rng)

    def __call__(self, s0: Tensor, s1: Tensor, alphas, betas, rng) -> Tensor:
        states = [s0, s1]
        e = 0
        for j in range(self.n_nodes):
            outs = []
            for i in range(j + 2):
                outs.append(mixed_edge_forward(self.edges[e], states[i], alphas[e], self.k, rng))
                e += 1
            states.append(node_forward(outs, betas[j]))
        return ag.relu(self.project(ag.concat(states[2:], axis=1)))


class Stem(Module):
    """Dense decompression to an image, then a 3x3 conv to the cell width."""

    def __init__(self, m: int, dims: tuple[int, int], width: int, rng):
        self.dims = dims
        self.dense = Dense(m, 2 * dims[0] * dims[1], rng)
        self.conv = Conv2d(2, width, (3, 3), rng)

    def __call__(self, s: Tensor) -> Tensor:
        h = ag.reshape(self.dense(s), (s.shape[0], 2, *self.dims))
        return ag.relu(self.conv(h))


class Head(Module):
    def __init__(self, width: int, rng):
        self.conv = Conv2d(width, 2, (3, 3), rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.sigmoid(self.conv(x))


class SuperNet(Module):
    """Decoder whose cells are all one shared SearchCell (shared alpha, beta and weights).

    No input-to-output residual inside cells while searching.
    """

    def __init__(self, cfg: SearchConfig, m: int, dims: tuple[int, int], rng: np.random.Generator):
        self.cfg = cfg
        self.op_set = cfg.op_set
        n_ops = len(cfg.op_set)
        self.stem = Stem(m, dims, cfg.width, rng)
        self.cell = SearchCell(cfg.n_nodes, cfg.width, cfg.op_set, cfg.partial_k, rng, cfg.op_relu)
        self.head = Head(cfg.width, rng)
        # equal initial architecture weights
        self.alphas = [Tensor(np.zeros(n_ops), requires_grad=True) for _ in cell_edges(cfg.n_nodes)]
        self.betas = [Tensor(np.zeros(j + 2), requires_grad=True) for j in range(cfg.n_nodes)]

    def arch_parameters(self) -> list[Tensor]:
        return [*self.alphas, *self.betas]

    def weight_parameters(self) -> list[Tensor]:
        return [*self.stem.parameters(), *self.cell.parameters(), *self.head.parameters()]

    def __call__(self, s: Tensor, rng: np.random.Generator) -> Tensor:
        s0 = s1 = self.stem(s)
        for _ in range(self.cfg.n_cells):
            s0, s1 = s1, self.cell(s0, s1, self.alphas, self.betas, rng)
        return self.head(s1)

    def predict(self, s: np.ndarray, rng: np.random.Generator, batch: int = 256) -> np.ndarray:
        outs = []
        with ag.no_grad():
            for start in range(0, len(s), batch):
                outs.append(self(Tensor(s[start : start + batch]), rng).data)
        return np.concatenate(outs)

    def alpha_entries(self) -> int:
        return sum(a.size for a in self.alphas)

    def genotype(self) -> Genotype:
        return derive_genotype(
            [a.data for a in self.alphas], [b.data for b in self.betas], self.op_set
        )


def build_supernet(cfg: SearchConfig, m: int, dims: tuple[int, int], seed: int | None = None) -> SuperNet:
    if m < 1 or dims[0] < 1 or dims[1] < 1:
        raise ValueError(f"invalid decoder dims M={m}, image={dims}")
    return SuperNet(cfg, m, dims, rng_for(cfg.seed if seed is None else seed, "supernet-init"))


def _softmax(v: np.ndarray) -> np.ndarray:
    z = np.exp(v - v.max())
    return z / z.sum()


def derive_genotype(alphas: Sequence[np.ndarray], betas: Sequence[np.ndarray], op_set: Sequence[str]) -> Genotype:
    """Discretize architecture weights.

    Edge (i, j) scores softmax(beta_j)[i] * max over non-zero ops of
    softmax(alpha_ij); each node keeps its two best edges, each with its best
    non-zero op. Ties go to the lower op index, then the lower input index.
    """
    op_set = validate_op_set(op_set)
    allowed = [k for k, name in enumerate(op_set) if name != "zero"] or list(range(len(op_set)))
    nodes = []
    e = 0
    for j, beta in enumerate(betas):
        bw = _softmax(np.asarray(beta, dtype=float))
        cands = []
        for i in range(j + 2):
            aw = _softmax(np.asarray(alphas[e], dtype=float))
            e += 1
            best = max(allowed, key=lambda k: (aw[k], -op_index(op_set[k])))
            cands.append((-(bw[i] * aw[best]), op_index(op_set[best]), i, op_set[best]))
        cands.sort()
        nodes.append(tuple((op, i) for _, _, i, op in cands[:2]))
    return Genotype(tuple(nodes), op_set).canonical()


# ---------------------------------------------------------------- bilevel loop


class WarmupError(RuntimeError):
    pass


class SearchSession:
    """Holds one supernet, its two optimizers and the random streams of a search."""

    def __init__(self, cfg: SearchConfig, data: FeedbackData):
        self.cfg = cfg
        self.data = data
        self.net = build_supernet(cfg, data.codec.M, data.dims)
        self.arch_opt = Adam(self.net.arch_parameters(), cfg.arch_lr)
        self.weight_opt = Adam(self.net.weight_parameters(), cfg.weight_lr, cfg.weight_lr_decay)
        self.mask_rng = rng_for(cfg.seed, "channel-masks")
        self.shuffle_rng = rng_for(cfg.seed, "shuffle")
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch
        self.weight_opt.set_epoch(epoch)

    def _loss(self, s: np.ndarray, h: np.ndarray) -> Tensor:
        return ag.mse(self.net(Tensor(s), self.mask_rng), Tensor(h))

    def alpha_step(self, s: np.ndarray, h: np.ndarray) -> float:
        """One step on MSE + lambda * ||(alpha, beta)||^2 with operator weights frozen."""
        if self.epoch < self.cfg.warmup_epochs:
            raise WarmupError(f"architecture weights are fixed during warm-up (epoch {self.epoch})")
        weights = self.net.weight_parameters()
        for p in weights:
            p.requires_grad = False
        try:
            self.arch_opt.zero_grad()
            loss = self._loss(s, h)
            reg = None
            for a in self.net.arch_parameters():
                term = ag.sq_norm(a)
                reg = term if reg is None else ag.add(reg, term)
            total = ag.add(loss, ag.scale(reg, self.cfg.arch_weight_decay))
            total.backward()
            self.arch_opt.step()
        finally:
            for p in weights:
                p.requires_grad = True
        return loss.item()

    def omega_step(self, s: np.ndarray, h: np.ndarray) -> float:
        """One step on MSE with architecture weights frozen."""
        arch = self.net.arch_parameters()
        for p in arch:
            p.requires_grad = False
        try:
            self.weight_opt.zero_grad()
            loss = self._loss(s, h)
            loss.backward()
            self.weight_opt.step()
        finally:
            for p in arch:
                p.requires_grad = True
        return loss.item()

    def run_epoch(self) -> float:
        cfg = self.cfg
        s_w, h_w = self.data.split("train_omega")
        s_a, h_a = self.data.split("train_alpha")
        bs = cfg.batch_size
        order_w = self.shuffle_rng.permutation(len(s_w))
        order_a = self.shuffle_rng.permutation(len(s_a))
        n_alpha_batches = max(1, math.ceil(len(s_a) / bs))
        losses = []
        for t, start in enumerate(range(0, len(s_w), bs)):
            if self.epoch >= cfg.warmup_epochs:
                a0 = (t % n_alpha_batches) * bs
                ib = order_a[a0 : a0 + bs]
                self.alpha_step(s_a[ib], h_a[ib])
            ib = order_w[start : start + bs]
            losses.append(self.omega_step(s_w[ib], h_w[ib]))
        return float(np.mean(losses))

    def test_nmse(self) -> tuple[float, float]:
        s, h = self.data.split("test")
        pred = self.net.predict(s, rng_for(self.cfg.seed, "eval-masks", self.epoch))
        return denorm_nmse(pred, h, self.data.lo, self.data.hi)


@dataclass
class CandidateRecord:
    genotype: Genotype
    nmse_db: float
    epoch: int


@dataclass
class SearchResult:
    candidates: list[CandidateRecord]
    log: list[dict]
    data: FeedbackData
    final_genotype: Genotype
    alphas: list[np.ndarray] = field(repr=False, default_factory=list)
    betas: list[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def genotypes(self) -> list[Genotype]:
        return [c.genotype for c in self.candidates]


LOG_COLUMNS = ("epoch", "phase", "train_loss", "supernet_nmse_db", "recorded")


def run_search(cfg: SearchConfig, dataset: CsiDataset | FeedbackData, progress=None) -> SearchResult:
    """Warm-up, alternating search epochs, and elastic candidate recording.

    A genotype is recorded when the supernet's test NMSE strictly improves on
    the best so far (starting from 0 dB), the epoch is past ``start_record``,
    fewer than ``max_records`` are held, and the genotype is new. Stops after
    ``search_epochs`` epochs or ``patience`` epochs without improvement.
    """
    if isinstance(dataset, FeedbackData):
        data = dataset
    else:
        data = prepare_feedback_data(dataset, cfg.cr, cfg.quant_bits, cfg.split, cfg.seed)
    session = SearchSession(cfg, data)
    best_db = 0.0
    last_improved = 0
    records: list[CandidateRecord] = []
    seen: set[Genotype] = set()
    rows: list[dict] = []
    for epoch in range(cfg.search_epochs):
        session.set_epoch(epoch)
        loss = session.run_epoch()
        _, db = session.test_nmse()
        recorded = 0
        if db < best_db:
            best_db, last_improved = db, epoch
            g = session.net.genotype()
            if epoch > cfg.start_record and len(records) < cfg.max_records and g not in seen:
                records.append(CandidateRecord(g, db, epoch))
                seen.add(g)
                recorded = 1
        rows.append(
            dict(
                epoch=epoch,
                phase="warmup" if epoch < cfg.warmup_epochs else "search",
                train_loss=loss,
                supernet_nmse_db=db,
                recorded=recorded,
            )
        )
        log.info("epoch %d loss %.5f nmse %.3f dB recorded=%d", epoch, loss, db, recorded)
        if progress:
            progress(rows[-1])
        if epoch - last_improved >= cfg.patience:
            log.info("no improvement for %d epochs; stopping", cfg.patience)
            break
    return SearchResult(
        records,
        rows,
        data,
        session.net.genotype(),
        [a.data.copy() for a in session.net.alphas],
        [b.data.copy() for b in session.net.betas],
    )
