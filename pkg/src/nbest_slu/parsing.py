"""Reduce raw completions to task labels.

Conventions: a binary answer that is not exactly ``1``/``0`` counts as
device-directed (label 1) and is flagged descriptive. Scale answers fall back
to the first integer in [0, 100], else 1.0. Keyword answers that are not an
exact label become OOV.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .prompting import KEYWORDS, OOV

_TRIM = " \t\r\n\"'`“”‘’"
_KW_TRIM = _TRIM + ".,;:!?()[]{}"
_INT = re.compile(r"(?<![\d.\-])\d+(?!\.\d)(?!\d)")


@dataclass(frozen=True)
class ParsedPrediction:
    utterance_id: str
    kind: str  # "binary" | "scale" | "keyword"
    binary_label: int | None = None
    score: float | None = None
    keyword: str | None = None
    was_descriptive: bool = False
    raw_text: str = ""

    @property
    def value(self):
        return {"binary": self.binary_label, "scale": self.score, "keyword": self.keyword}[self.kind]

    def to_record(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "kind": self.kind,
            "label_or_score": self.value,
            "was_descriptive": self.was_descriptive,
            "raw_text": self.raw_text,
        }

    @classmethod
    def from_record(cls, d: dict) -> "ParsedPrediction":
        kind = d["kind"]
        v = d["label_or_score"]
        if kind == "binary":
            kw = {"binary_label": None if v is None else int(v)}
        elif kind == "scale":
            kw = {"score": None if v is None else float(v)}
        elif kind == "keyword":
            kw = {"keyword": v}
        else:
            raise ValueError(f"unknown prediction kind {kind!r}")
        return cls(d["utterance_id"], kind, was_descriptive=bool(d["was_descriptive"]),
                   raw_text=d.get("raw_text", ""), **kw)


def parse_binary(raw: str, utterance_id: str = "") -> ParsedPrediction:
    s = raw.strip(_TRIM)
    if s in ("0", "1"):
        return ParsedPrediction(utterance_id, "binary", binary_label=int(s), raw_text=raw)
    return ParsedPrediction(utterance_id, "binary", binary_label=1, was_descriptive=True, raw_text=raw)


def parse_scale(raw: str, utterance_id: str = "") -> ParsedPrediction:
    s = raw.strip(_TRIM)
    if s.isascii() and s.isdigit() and int(s) <= 100:
        return ParsedPrediction(utterance_id, "scale", score=int(s) / 100, raw_text=raw)
    for m in _INT.finditer(s):
        k = int(m.group())
        if k <= 100:
            return ParsedPrediction(utterance_id, "scale", score=k / 100, was_descriptive=True, raw_text=raw)
    return ParsedPrediction(utterance_id, "scale", score=1.0, was_descriptive=True, raw_text=raw)


def parse_keyword(raw: str, utterance_id: str = "") -> ParsedPrediction:
    s = raw.strip(_KW_TRIM).lower()
    if s in KEYWORDS:
        return ParsedPrediction(utterance_id, "keyword", keyword=s, raw_text=raw)
    if s == "oov":
        return ParsedPrediction(utterance_id, "keyword", keyword=OOV, raw_text=raw)
    return ParsedPrediction(utterance_id, "keyword", keyword=OOV, was_descriptive=True, raw_text=raw)


def parse_for_mode(raw: str, output_mode, utterance_id: str = "") -> ParsedPrediction:
    mode = getattr(output_mode, "value", output_mode)
    fn = {"binary_target": parse_binary, "scale_0_100": parse_scale, "keyword": parse_keyword}[mode]
    return fn(raw, utterance_id)


def probability_to_scale_label(p: float) -> int:
    """``round(100 * p)`` with ties to even."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p!r} outside [0, 1]")
    return round(100 * p)


def descriptive_fraction(preds) -> float:
    preds = list(preds)
    if not preds:
        return 0.0
    return sum(p.was_descriptive for p in preds) / len(preds)

