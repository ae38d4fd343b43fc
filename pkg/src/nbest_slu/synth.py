"""Seeded synthetic ASR corpora.

Each reference word becomes one slot of a sausage lattice holding the true
word, its confusable alternatives and (optionally) an epsilon deletion arc.
Slot scores follow the Gumbel-max construction: candidate ``w`` scores
``log P(w | true word) + G_w`` with ``G_w ~ Gumbel(0, 1)``, so the best-scoring
candidate is distributed exactly as the confusion channel (1-best WER equals
the substitution mass), while the runner-up margins carry the information an
n-best list adds over the 1-best. Arc cost is the negated score plus optional
Gaussian noise and a per-slot offset (cosmetic: every path crosses every slot
once), split 70/30 between acoustic and language-model cost.

An insertion adds a slot holding an epsilon arc and the inserted word, with
scores drawn conditioned on the inserted word winning.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .lattice import Arc, Lattice, NBestList, extract_nbest
from .prompting import KEYWORDS, OOV, Task


class ConfigError(ValueError):
    pass


@dataclass
class ChannelConfig:
    seed: int = 0
    task: Task = Task.KS
    vocabulary: list[str] = field(default_factory=list)
    confusion: dict[str, list[tuple[str, float]]] = field(default_factory=dict)
    substitution_mass: float | None = None
    deletion_prob: float = 0.0
    insertion_prob: float = 0.0
    cost_noise_sigma: float = 0.0
    n_paths: int = 16
    am_fraction: float = 0.7
    slot_offset: tuple[float, float] = (0.0, 0.0)
    keyword_fraction: float = 0.5
    oov_words: list[str] = field(default_factory=list)
    directed_utterances: list[str] = field(default_factory=list)
    undirected_utterances: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.task = Task(self.task)
        self.confusion = {w: [(a, float(p)) for a, p in alts] for w, alts in self.confusion.items()}
        self.slot_offset = tuple(self.slot_offset)
        if self.substitution_mass is not None:
            self.confusion = _rescale(self.confusion, self.substitution_mass)
        self.validate()

    def validate(self):
        if not self.vocabulary:
            raise ConfigError("vocabulary must not be empty")
        for name in ("deletion_prob", "insertion_prob"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.cost_noise_sigma < 0:
            raise ConfigError("cost_noise_sigma must be non-negative")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be positive")
        for w, alts in self.confusion.items():
            if any(p < 0 for _, p in alts):
                raise ConfigError(f"negative confusion probability for {w!r}")
            if self_prob(self, w) <= 0:
                raise ConfigError(f"confusions for {w!r} leave no self-probability")
        if self.task is Task.KS and not self.oov_words:
            raise ConfigError("KS config needs oov_words")
        if self.task is Task.DDSD and not (self.directed_utterances and self.undirected_utterances):
            raise ConfigError("DDSD config needs directed and undirected utterances")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        d["confusion"] = {w: [list(x) for x in alts] for w, alts in self.confusion.items()}
        d["slot_offset"] = list(self.slot_offset)
        d["substitution_mass"] = None  # already folded into confusion
        return d

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "ChannelConfig":
        d = {**d, **overrides}
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown channel config keys: {sorted(unknown)}")
        return cls(**d)


def _rescale(confusion, mass):
    out = {}
    for w, alts in confusion.items():
        tot = sum(p for _, p in alts)
        out[w] = [(a, p * mass / tot) for a, p in alts] if tot > 0 else list(alts)
    return out


def self_prob(config: ChannelConfig, word: str) -> float:
    return 1.0 - sum(p for _, p in config.confusion.get(word, ())) - config.deletion_prob


def builtin_config_names() -> list[str]:
    files = resources.files("nbest_slu") / "configs"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_channel_config(name_or_path: str, **overrides) -> ChannelConfig:
    """Load a config by shipped name (``ks_default``) or JSON file path."""
    if os.path.exists(name_or_path):
        text = Path(name_or_path).read_text(encoding="utf-8")
    else:
        res = resources.files("nbest_slu") / "configs" / f"{name_or_path}.json"
        if not res.is_file():
            raise ConfigError(f"no such channel config: {name_or_path!r} (builtin: {builtin_config_names()})")
        text = res.read_text(encoding="utf-8")
    d = json.loads(text)
    d.pop("_comment", None)
    return ChannelConfig.from_dict(d, **{k: v for k, v in overrides.items() if v is not None})


@dataclass(frozen=True)
class SyntheticUtterance:
    utterance_id: str
    gold: str
    reference_words: tuple[str, ...]
    lattice: Lattice
    nbest: NBestList

    def manifest_record(self, lattice_path: str) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "gold": self.gold,
            "reference": " ".join(self.reference_words),
            "lattice_path": lattice_path,
        }


def _golds(config: ChannelConfig, size: int) -> list[tuple[str, tuple[str, ...]]]:
    rng = np.random.default_rng([config.seed, 0])
    out = []
    if config.task is Task.KS:
        for _ in range(size):
            if rng.random() < config.keyword_fraction:
                w = KEYWORDS[rng.integers(len(KEYWORDS))]
                out.append((w, (w,)))
            else:
                w = config.oov_words[rng.integers(len(config.oov_words))]
                out.append((OOV, (w,)))
        return out
    labels = np.array([1] * ((size + 1) // 2) + [0] * (size // 2))
    rng.shuffle(labels)
    for lab in labels:
        pool = config.directed_utterances if lab else config.undirected_utterances
        out.append((str(int(lab)), tuple(pool[rng.integers(len(pool))].split())))
    return out


def _slot_scores(rng, probs, winner=None):
    logp = np.log(probs)
    while True:
        scores = logp + rng.gumbel(size=len(probs))
        if winner is None or int(np.argmax(scores)) == winner:
            return scores


def _slot_arcs(rng, config, words, scores, node, offset):
    noise = rng.normal(0.0, 1.0, size=len(words)) * config.cost_noise_sigma
    arcs = []
    for w, sc, e in zip(words, scores, noise):
        total = round(float(-sc + e + offset), 4) + 0.0
        am = round(total * config.am_fraction, 4) + 0.0
        arcs.append(Arc(node, node + 1, w, am, round(total - am, 4) + 0.0))
    return arcs


def _utterance(config: ChannelConfig, index: int, gold: str, ref: tuple[str, ...]) -> SyntheticUtterance:
    rng = np.random.default_rng([config.seed, 1, index])
    uid = f"{config.task.value.lower()}-{config.seed}-{index:06d}"
    arcs: list[Arc] = []
    node = 0
    lo, hi = config.slot_offset
    for r in ref:
        cands = [(r, self_prob(config, r))]
        cands += [(a, p) for a, p in config.confusion.get(r, ()) if p > 0]
        if config.deletion_prob > 0:
            cands.append(("", config.deletion_prob))
        words = [w for w, _ in cands]
        probs = np.array([p for _, p in cands])
        scores = _slot_scores(rng, probs / probs.sum())
        offset = rng.uniform(lo, hi) if hi > lo else lo
        arcs += _slot_arcs(rng, config, words, scores, node, offset)
        node += 1
        if rng.random() < config.insertion_prob:
            w = config.vocabulary[rng.integers(len(config.vocabulary))]
            scores = _slot_scores(rng, np.array([0.5, 0.5]), winner=1)
            offset = rng.uniform(lo, hi) if hi > lo else lo
            arcs += _slot_arcs(rng, config, ["", w], scores, node, offset)
            node += 1
    lat = Lattice(uid, 0, frozenset([node]), tuple(arcs))
    return SyntheticUtterance(uid, gold, ref, lat, extract_nbest(lat, config.n_paths))


def generate_corpus(config: ChannelConfig, size: int) -> list[SyntheticUtterance]:
    """``size`` utterances; byte-identical for a fixed config and seed."""
    if size < 1:
        raise ConfigError("size must be positive")
    config.validate()
    return [_utterance(config, i, g, ref) for i, (g, ref) in enumerate(_golds(config, size))]


def write_corpus(utts: Sequence[SyntheticUtterance], out_dir, manifest_name: str = "manifest.jsonl") -> Path:
    """Write ``lattices/<id>.json`` files plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "lattices").mkdir(parents=True, exist_ok=True)
    manifest = out / manifest_name
    with open(manifest, "w", encoding="utf-8") as fh:
        for u in utts:
            rel = f"lattices/{u.utterance_id}.json"
            (out / rel).write_text(u.lattice.dumps() + "\n", encoding="utf-8")
            fh.write(json.dumps(u.manifest_record(rel)) + "\n")
    return manifest


# -- WER --------------------------------------------------------------------

def _ids(hyp: Sequence[str], ref: Sequence[str]):
    vocab: dict[str, int] = {}
    h = np.array([vocab.setdefault(w, len(vocab)) for w in hyp], dtype=np.int64)
    r = np.array([vocab.setdefault(w, len(vocab)) for w in ref], dtype=np.int64)
    return h, r


def edit_errors(hypothesis: Sequence[str], reference: Sequence[str]) -> int:
    return kernels.edit_distance(*_ids(hypothesis, reference))


def wer(hypothesis: Sequence[str], reference: Sequence[str]) -> float:
    """(S + D + I) / len(reference)."""
    if len(reference) == 0:
        raise ValueError("reference must be non-empty")
    return edit_errors(hypothesis, reference) / len(reference)


def corpus_wer(pairs) -> float:
    """Pooled WER over ``(hypothesis, reference)`` pairs."""
    errs = 0
    words = 0
    for hyp, ref in pairs:
        errs += edit_errors(hyp, ref)
        words += len(ref)
    if words == 0:
        raise ValueError("empty reference corpus")
    return errs / words
