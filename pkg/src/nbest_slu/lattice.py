"""Word lattices and n-best extraction.

A lattice is an acyclic word graph whose arcs carry acoustic and language
model costs (log domain, lower is better). Hypothesis costs are the path sum
of ``am_cost + lm_cost``; the sum is accumulated exactly with
:class:`fractions.Fraction` and rounded to float once, so equal-cost ties are
decided on the true real-valued sum independent of summation order.

Equal-cost paths are ordered by word sequence (lexicographic), then by the
sequence of arc indices.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence


class LatticeError(ValueError):
    """Malformed lattice document or graph."""


@dataclass(frozen=True)
class Arc:
    src: int
    dst: int
    word: str
    am_cost: float
    lm_cost: float

    @property
    def cost(self) -> float:
        return self.am_cost + self.lm_cost

    @property
    def is_epsilon(self) -> bool:
        return self.word == ""


@dataclass(frozen=True)
class Hypothesis:
    words: tuple[str, ...]
    cost: float
    arcs: tuple[int, ...] = field(default=(), compare=False)

    @property
    def text(self) -> str:
        return " ".join(self.words)


@dataclass(frozen=True)
class NBestList:
    utterance_id: str
    hypotheses: tuple[Hypothesis, ...]
    n_requested: int

    def __post_init__(self):
        if self.n_requested < 1:
            raise ValueError("n_requested must be >= 1")
        if not 1 <= len(self.hypotheses) <= self.n_requested:
            raise ValueError(
                f"{len(self.hypotheses)} hypotheses for n_requested={self.n_requested}"
            )
        costs = [h.cost for h in self.hypotheses]
        if any(b < a for a, b in zip(costs, costs[1:])):
            raise ValueError("hypotheses must be sorted by non-decreasing cost")

    def __len__(self) -> int:
        return len(self.hypotheses)

    @property
    def best(self) -> Hypothesis:
        return self.hypotheses[0]

    def truncate(self, n: int) -> "NBestList":
        return NBestList(self.utterance_id, self.hypotheses[:n], n)

    def to_dict(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "hypotheses": [{"words": list(h.words), "cost": h.cost} for h in self.hypotheses],
        }

    @classmethod
    def from_dict(cls, d: dict, n_requested: int | None = None) -> "NBestList":
        hyps = tuple(
            Hypothesis(tuple(h["words"]), float(h["cost"])) for h in d["hypotheses"]
        )
        return cls(d["utterance_id"], hyps, n_requested or len(hyps))


@dataclass(frozen=True)
class Lattice:
    utterance_id: str
    start: int
    finals: frozenset[int]
    arcs: tuple[Arc, ...]

    def __post_init__(self):
        object.__setattr__(self, "finals", frozenset(self.finals))
        object.__setattr__(self, "arcs", tuple(self.arcs))
        _validate(self)

    @property
    def nodes(self) -> frozenset[int]:
        ns = {self.start, *self.finals}
        for a in self.arcs:
            ns.add(a.src)
            ns.add(a.dst)
        return frozenset(ns)

    def out_arcs(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {v: [] for v in self.nodes}
        for i, a in enumerate(self.arcs):
            out[a.src].append(i)
        return out

    def topological_order(self) -> list[int]:
        return _toposort(self)

    def to_dict(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "start": self.start,
            "finals": sorted(self.finals),
            "arcs": [
                {"from": a.src, "to": a.dst, "word": a.word,
                 "am_cost": a.am_cost, "lm_cost": a.lm_cost}
                for a in self.arcs
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def _toposort(lat: Lattice) -> list[int]:
    # iterative DFS; reports the first back-arc found
    out = {v: [] for v in lat.nodes}
    for i, a in enumerate(lat.arcs):
        out[a.src].append(i)
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(out, WHITE)
    order: list[int] = []
    for root in sorted(out):
        if color[root] != WHITE:
            continue
        color[root] = GREY
        stack = [(root, iter(out[root]))]
        while stack:
            v, it = stack[-1]
            for ai in it:
                w = lat.arcs[ai].dst
                if color[w] == GREY:
                    raise LatticeError(
                        f"cycle detected: back-arc #{ai} {lat.arcs[ai].src}->{w} "
                        f"in lattice {lat.utterance_id!r}"
                    )
                if color[w] == WHITE:
                    color[w] = GREY
                    stack.append((w, iter(out[w])))
                    break
            else:
                color[v] = BLACK
                order.append(v)
                stack.pop()
    order.reverse()
    return order


def _validate(lat: Lattice) -> None:
    uid = lat.utterance_id
    if not lat.finals:
        raise LatticeError(f"lattice {uid!r}: empty finals")
    if not lat.arcs and lat.start not in lat.finals:
        raise LatticeError(f"lattice {uid!r}: no arcs and start {lat.start} is not final")
    for i, a in enumerate(lat.arcs):
        for c in (a.am_cost, a.lm_cost):
            if c != c or c in (float("inf"), float("-inf")):
                raise LatticeError(f"lattice {uid!r}: arc #{i} has non-finite cost")
    _toposort(lat)

    fwd: dict[int, list[int]] = {v: [] for v in lat.nodes}
    bwd: dict[int, list[int]] = {v: [] for v in lat.nodes}
    for a in lat.arcs:
        fwd[a.src].append(a.dst)
        bwd[a.dst].append(a.src)
    reach = _closure([lat.start], fwd)
    for v in sorted(lat.nodes):
        if v not in reach:
            raise LatticeError(f"lattice {uid!r}: node {v} unreachable from start {lat.start}")
    coreach = _closure(lat.finals, bwd)
    for v in sorted(lat.nodes):
        if v not in coreach:
            raise LatticeError(f"lattice {uid!r}: node {v} cannot reach a final node")


def _closure(seeds: Iterable[int], adj: dict[int, list[int]]) -> set[int]:
    seen = set(seeds)
    todo = list(seen)
    while todo:
        for w in adj[todo.pop()]:
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return seen


def lattice_from_dict(d: dict) -> Lattice:
    try:
        arcs = [
            Arc(int(a["from"]), int(a["to"]), str(a.get("word", "")),
                float(a["am_cost"]), float(a["lm_cost"]))
            for a in d["arcs"]
        ]
        return Lattice(
            utterance_id=str(d.get("utterance_id", "")),
            start=int(d["start"]),
            finals=frozenset(int(f) for f in d["finals"]),
            arcs=tuple(arcs),
        )
    except (KeyError, TypeError) as exc:
        raise LatticeError(f"malformed lattice document: {exc!r}") from exc


def load_lattice(data: bytes | str) -> Lattice:
    """Parse one lattice JSON document."""
    try:
        d = json.loads(data)
    except json.JSONDecodeError as exc:
        raise LatticeError(f"lattice parse error at line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise LatticeError("lattice document must be a JSON object")
    return lattice_from_dict(d)


def iter_lattices(data: bytes | str) -> Iterator[Lattice]:
    """Parse a ``.jsonl`` stream of lattices, one per non-blank line."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    for line in data.splitlines():
        if line.strip():
            yield load_lattice(line)


def read_lattices(path) -> list[Lattice]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if str(path).endswith(".jsonl"):
        return list(iter_lattices(raw))
    return [load_lattice(raw)]


# -- path costs -------------------------------------------------------------

def _exact_arc_costs(lat: Lattice) -> list[Fraction]:
    return [Fraction(a.am_cost) + Fraction(a.lm_cost) for a in lat.arcs]


def hypothesis_cost(lattice: Lattice, path: Sequence[int]) -> float:
    """Total cost of a start-to-final path given as arc indices."""
    node = lattice.start
    total = Fraction(0)
    for k, ai in enumerate(path):
        if not 0 <= ai < len(lattice.arcs):
            raise LatticeError(f"arc index {ai} at position {k} is not in the lattice")
        a = lattice.arcs[ai]
        if a.src != node:
            raise LatticeError(f"path disconnected at position {k}: arc #{ai} leaves {a.src}, expected {node}")
        total += Fraction(a.am_cost) + Fraction(a.lm_cost)
        node = a.dst
    if node not in lattice.finals:
        raise LatticeError(f"path ends at non-final node {node}")
    return float(total)


# -- n-best -----------------------------------------------------------------

def extract_nbest(lattice: Lattice, n: int, dedupe: bool = False) -> NBestList:
    """The ``n`` least-cost start-to-final paths, ascending.

    Backward dynamic program over the topological order: every node keeps its
    ``n`` best suffix paths. Prepending a fixed arc preserves the
    (cost, words, arcs) order, so a node's list is the ``n``-prefix of a lazy
    merge over its successors' lists.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    costs = _exact_arc_costs(lattice)
    out = lattice.out_arcs()
    # entries are (exact_cost, words, arc_indices)
    best: dict[int, list[tuple[Fraction, tuple[str, ...], tuple[int, ...]]]] = {}
    for v in reversed(lattice.topological_order()):
        streams = []
        if v in lattice.finals:
            streams.append(iter([(Fraction(0), (), ())]))
        for ai in out[v]:
            streams.append(_extend(ai, lattice.arcs[ai], costs[ai], best[lattice.arcs[ai].dst]))
        kept = []
        seen = set()
        for entry in heapq.merge(*streams):
            if dedupe:
                if entry[1] in seen:
                    continue
                seen.add(entry[1])
            kept.append(entry)
            if len(kept) == n:
                break
        best[v] = kept
    hyps = tuple(Hypothesis(w, float(c), p) for c, w, p in best[lattice.start])
    return NBestList(lattice.utterance_id, hyps, n)


def _extend(ai, arc, cost, suffixes):
    prefix = () if arc.is_epsilon else (arc.word,)
    for c, w, p in suffixes:
        yield (cost + c, prefix + w, (ai,) + p)


def one_best(lattice: Lattice) -> Hypothesis:
    return extract_nbest(lattice, 1).hypotheses[0]
