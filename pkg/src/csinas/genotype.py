"""Discrete cell descriptions.

A genotype lists, per inner node, two ``(op_name, input_index)`` branches.
Inputs 0 and 1 are the cell's external inputs (outputs of cells k-2 and k-1);
inner node ``j`` has index ``j + 2``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .ops import OP_NAMES, validate_op_set

GENOTYPE_VERSION = 1

Branch = tuple[str, int]


@dataclass(frozen=True)
class Genotype:
    nodes: tuple[tuple[Branch, Branch], ...]
    op_set: tuple[str, ...] = OP_NAMES
    version: int = GENOTYPE_VERSION

    @classmethod
    def from_lists(cls, nodes, op_set: Sequence[str] = OP_NAMES) -> "Genotype":
        """Build a canonical genotype from nested lists; raises on malformed shape."""
        built = []
        for j, node in enumerate(nodes):
            if len(node) != 2:
                raise ValueError(f"node {j} has {len(node)} branches; exactly 2 required")
            built.append(tuple((str(op), int(i)) for op, i in node))
        return cls(tuple(built), tuple(op_set)).canonical()

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def canonical(self) -> "Genotype":
        nodes = tuple(tuple(sorted(node)) for node in self.nodes)
        return Genotype(nodes, validate_op_set(self.op_set), self.version)

    def violations(self) -> list[str]:
        """Reasons this genotype is not a member of its (N, op_set) space."""
        problems = []
        if self.num_nodes < 1:
            problems.append("genotype has no inner nodes")
        try:
            ops = set(validate_op_set(self.op_set))
        except ValueError as exc:
            return [str(exc)]
        for j, node in enumerate(self.nodes):
            if len(node) != 2:
                problems.append(f"node {j}: {len(node)} branches, need 2")
                continue
            for op, i in node:
                if op not in ops:
                    problems.append(f"node {j}: operator {op!r} not in op set")
                if not 0 <= i < j + 2:
                    problems.append(f"node {j}: input {i} is not an earlier node")
            if node[0][1] == node[1][1]:
                problems.append(f"node {j}: both branches read input {node[0][1]}")
        return problems

    def is_member(self) -> bool:
        return not self.violations()

    def to_dict(self) -> dict:
        g = self.canonical()
        return {
            "version": g.version,
            "op_set": list(g.op_set),
            "num_nodes": g.num_nodes,
            "nodes": [[[op, i] for op, i in node] for node in g.nodes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Genotype":
        if int(d.get("version", GENOTYPE_VERSION)) != GENOTYPE_VERSION:
            raise ValueError(f"unsupported genotype version {d.get('version')}")
        g = cls.from_lists(d["nodes"], d.get("op_set", OP_NAMES))
        if "num_nodes" in d and int(d["num_nodes"]) != g.num_nodes:
            raise ValueError(f"num_nodes={d['num_nodes']} but {g.num_nodes} nodes listed")
        return g

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def id(self) -> str:
        return hashlib.sha1(self.to_json().encode()).hexdigest()[:12]

    def describe(self) -> str:
        return " | ".join(
            " + ".join(f"{op}({i})" for op, i in node) for node in self.canonical().nodes
        )


def encode_manual_cell(nodes, op_set: Sequence[str] = OP_NAMES) -> tuple[Genotype | None, bool, list[str]]:
    """Canonicalize a hand-written cell and check membership.

    Returns ``(genotype, is_member, problems)``; the genotype is None when the
    description cannot even be parsed into two-branch nodes.
    """
    try:
        g = Genotype.from_lists(nodes, op_set)
    except (ValueError, TypeError) as exc:
        return None, False, [str(exc)]
    problems = g.violations()
    return g, not problems, problems


# Multi-resolution block with a 3x3 -> 1x9/9x1 path and a 1x5/5x1 path from the
# same input, merged by the cell's concat + 1x1 projection. The unused branch
# of each node reads the other external input through ``zero``.
CRBLOCK_NODES = [
    [("conv3x3", 1), ("zero", 0)],
    [("conv1x9_9x1", 2), ("zero", 0)],
    [("conv1x5_5x1", 1), ("zero", 0)],
]


def crblock() -> Genotype:
    return Genotype.from_lists(CRBLOCK_NODES)


def cell_space_size(n_ops: int, n_nodes: int) -> int:
    """prod_{k=0}^{N-1} |O|^2 * C(k+2, 2), exact."""
    if n_ops < 1 or n_nodes < 1:
        raise ValueError("need |O| >= 1 and N >= 1")
    total = 1
    for k in range(n_nodes):
        total *= n_ops**2 * comb(k + 2, 2)
    return total


def global_space_size(n_ops: int, n_nodes: int) -> int:
    """|O|^(2N) * 2^C(2N, 2), exact."""
    if n_ops < 1 or n_nodes < 1:
        raise ValueError("need |O| >= 1 and N >= 1")
    return n_ops ** (2 * n_nodes) * 2 ** comb(2 * n_nodes, 2)


def enumerate_genotypes(op_set: Sequence[str], n_nodes: int) -> Iterator[Genotype]:
    """Every member of the (N, op_set) cell space, each exactly once."""
    op_set = validate_op_set(op_set)

    def rec(j, acc):
        if j == n_nodes:
            yield Genotype(tuple(acc), op_set)
            return
        for a in range(j + 2):
            for b in range(a + 1, j + 2):
                for oa in op_set:
                    for ob in op_set:
                        yield from rec(j + 1, acc + [tuple(sorted(((oa, a), (ob, b))))])

    yield from rec(0, [])


def random_genotype(op_set: Sequence[str], n_nodes: int, rng: np.random.Generator) -> Genotype:
    """Uniform draw from the cell space: an input pair per node, then an op per branch."""
    op_set = validate_op_set(op_set)
    nodes = []
    for j in range(n_nodes):
        pairs = [(a, b) for a in range(j + 2) for b in range(a + 1, j + 2)]
        a, b = pairs[rng.integers(len(pairs))]
        oa, ob = op_set[rng.integers(len(op_set))], op_set[rng.integers(len(op_set))]
        nodes.append(((oa, a), (ob, b)))
    return Genotype(tuple(nodes), op_set).canonical()


def write_genotypes(genotypes: Sequence[Genotype], path: str | Path) -> None:
    Path(path).write_text(json.dumps([g.to_dict() for g in genotypes], indent=1) + "\n", encoding="utf-8")


def read_genotypes(path: str | Path) -> list[Genotype]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = [data]
    return [Genotype.from_dict(d) for d in data]
