"""Utterance-prompt serialization, task-prompt registry and prompt rendering."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, replace
from typing import Callable, Iterable

from .lattice import Hypothesis, NBestList

KEYWORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
OOV = "OOV"
LABELS = KEYWORDS + (OOV,)

DEFAULT_BUDGET = 2048


class Task(str, enum.Enum):
    DDSD = "DDSD"
    KS = "KS"


class InputMode(str, enum.Enum):
    ONE_BEST = "one_best"
    N_BEST = "n_best"


class OutputMode(str, enum.Enum):
    BINARY = "binary_target"
    SCALE = "scale_0_100"
    KEYWORD = "keyword"


class Ablation(str, enum.Enum):
    NO_TASK_PROMPT = "no_task_prompt"
    GIBBERISH_TASK_PROMPT = "gibberish_task_prompt"
    NO_HYPOTHESIS_COST = "no_hypothesis_cost"


# CLI spellings
ABLATION_ALIASES = {
    "no-tp": Ablation.NO_TASK_PROMPT,
    "gib-tp": Ablation.GIBBERISH_TASK_PROMPT,
    "no-hc": Ablation.NO_HYPOTHESIS_COST,
}


class PromptError(ValueError):
    pass


class BudgetError(PromptError):
    pass


@dataclass(frozen=True)
class TaskPrompt:
    task: Task
    input_mode: InputMode
    output_mode: OutputMode
    prefix: str
    infix: str
    suffix: str
    non_paper_text: bool = False

    def __post_init__(self):
        ok = {Task.DDSD: {OutputMode.BINARY, OutputMode.SCALE}, Task.KS: {OutputMode.KEYWORD}}
        if self.output_mode not in ok[self.task]:
            raise PromptError(f"{self.task.value} does not support output mode {self.output_mode.value}")
        if not (self.prefix and self.infix and self.suffix):
            raise PromptError("task-prompt segments must be non-empty")

    @property
    def text(self) -> str:
        return f"{self.prefix} {self.infix} {self.suffix}"


@dataclass(frozen=True)
class UtterancePrompt:
    utterance_id: str
    text: str
    hypothesis_count: int
    costs_included: bool
    cost_decimals: int = 1


@dataclass(frozen=True)
class PromptBundle:
    task_prompt: TaskPrompt | None
    utterance_prompt: UtterancePrompt
    rendered: str
    ablations: frozenset[Ablation] = frozenset()
    dropped: int = 0

    @property
    def utterance_id(self) -> str:
        return self.utterance_prompt.utterance_id

    def to_record(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "rendered": self.rendered,
            "ablations": sorted(a.value for a in self.ablations),
        }


# -- serialization ----------------------------------------------------------

def format_cost(cost: float, decimals: int = 1) -> str:
    return f"{cost:.{decimals}f}"


def serialize_utterance(nbest: NBestList, include_costs: bool = True, cost_decimals: int = 1) -> UtterancePrompt:
    lines = []
    for h in nbest.hypotheses:
        line = " ".join(h.words)
        if include_costs:
            line = f"{line} [{format_cost(h.cost, cost_decimals)}]"
        lines.append(line)
    return UtterancePrompt(
        utterance_id=nbest.utterance_id,
        text="\n".join(lines),
        hypothesis_count=len(lines),
        costs_included=include_costs,
        cost_decimals=cost_decimals,
    )


_COST_TAIL = re.compile(r"^(.*?) ?\[(-?\d+(?:\.\d+)?)\]$")


def parse_utterance(text: str, with_costs: bool | None = None) -> list[tuple[tuple[str, ...], float | None]]:
    """Inverse of :func:`serialize_utterance`.

    ``with_costs=None`` accepts lines with or without a trailing cost token.
    """
    out = []
    for line in text.split("\n"):
        m = _COST_TAIL.match(line)
        if m and with_costs is not False:
            out.append((tuple(m.group(1).split()), float(m.group(2))))
        elif with_costs:
            raise PromptError(f"missing cost token in line {line!r}")
        else:
            out.append((tuple(line.split()), None))
    return out


# -- registry ---------------------------------------------------------------

_DDSD_PREFIX_1BEST = (
    "Determine whether the following spoken utterance is directed towards a voice "
    "assistant or a human being."
)
_DDSD_PREFIX_NBEST = (
    "In this task, we provide an n-best list of ASR hypotheses for a spoken utterance. "
    "Each of the hypothesis is separated by a newline character. The cost of each "
    "hypothesis is at the end in the format '[cost]' where a low cost indicates that we "
    "are more confident about that ASR hypothesis. Determine whether the following "
    "spoken utterance is directed towards a voice assistant or a human being by taking "
    "into account all the n-best hypotheses."
)
_DDSD_INFIX = (
    "Typical spoken utterances directed towards the voice assistant are commands to "
    "fulfill a task or queries to get some information."
)
_DDSD_SUFFIX_BINARY = (
    "Answer only from the following categories ['1', '0'] where '1' indicates that the "
    "utterance is directed towards the voice assistant and '0' indicates that the "
    "utterance is directed towards a human being."
)
_DDSD_SUFFIX_SCALE = (
    "Answer on a scale of 0 to 100 where a score of '100' indicates that the utterance "
    "is directed towards the voice assistant and '0' indicates that the utterance is "
    "directed towards a human being. Your answer should only contain an integer "
    "between 0 and 100."
)

_KW_LIST = ", ".join(f"'{k}'" for k in KEYWORDS)
_KS_PREFIX_1BEST = (
    f"Keyword spotting. Commands of interest: {_KW_LIST}. "
    "You are shown the single best speech recognition transcript of a short recording."
)
_KS_PREFIX_NBEST = (
    f"Keyword spotting. Commands of interest: {_KW_LIST}. "
    "You are shown several competing speech recognition transcripts of one short "
    "recording, one per line, best first. The bracketed number after each line is its "
    "recognition cost; smaller numbers mean the recognizer trusts that line more."
)
_KS_INFIX = (
    "Any recording that is not one of the commands, including other words, counts as "
    "out-of-vocabulary."
)
_KS_SUFFIX = (
    f"Reply with exactly one label from [{_KW_LIST}, 'OOV'] and nothing else. "
    "Transcript:"
)

GIBBERISH_TASK_PROMPT = (
    "Vorlin tesk mabura quenditho saflem orrin dwespa lunotar ish kravel mondu "
    "pelathi vossun grimbel. Tiraque ulm fensodar plivish amtor nuvaleth krosp ibbly "
    "zanthe morquil edrabo snell quavatine. Hurrot fip glendari sommeth yavel "
    "proskin taldu ferrimac vunt oskeli brannow thimpet ulvara gresh. Plonder ostique "
    "mavren dull kestriva enbo farquil sadrith woom pellaton crisk yembrel noster "
    "vaddish. Elmorra tisk vanquo drellip sunthar obbin faloreth quispen gradle "
    "murrovane etch lobrin savvet."
)


def builtin_task_prompts() -> dict[tuple[Task, InputMode, OutputMode], TaskPrompt]:
    reg = {}
    for mode, prefix in ((InputMode.ONE_BEST, _DDSD_PREFIX_1BEST), (InputMode.N_BEST, _DDSD_PREFIX_NBEST)):
        for out, suffix in ((OutputMode.BINARY, _DDSD_SUFFIX_BINARY), (OutputMode.SCALE, _DDSD_SUFFIX_SCALE)):
            reg[(Task.DDSD, mode, out)] = TaskPrompt(Task.DDSD, mode, out, prefix, _DDSD_INFIX, suffix)
    for mode, prefix in ((InputMode.ONE_BEST, _KS_PREFIX_1BEST), (InputMode.N_BEST, _KS_PREFIX_NBEST)):
        reg[(Task.KS, mode, OutputMode.KEYWORD)] = TaskPrompt(
            Task.KS, mode, OutputMode.KEYWORD, prefix, _KS_INFIX, _KS_SUFFIX, non_paper_text=True
        )
    return reg


def lookup(task, input_mode, output_mode) -> TaskPrompt:
    key = (Task(task), InputMode(input_mode), OutputMode(output_mode))
    try:
        return builtin_task_prompts()[key]
    except KeyError:
        raise PromptError(f"no task-prompt for {key}") from None


def split_rendered(rendered: str) -> str:
    """Recover the utterance block from a rendered prompt.

    Strips whichever registered task-prompt text (or the gibberish prompt)
    precedes it; a prompt with none of them is returned unchanged.
    """
    heads = [tp.text for tp in builtin_task_prompts().values()] + [GIBBERISH_TASK_PROMPT]
    for head in sorted(set(heads), key=len, reverse=True):
        if rendered.startswith(head + " "):
            return rendered[len(head) + 1:]
    return rendered


# -- rendering --------------------------------------------------------------

def _norm_ablations(ablations: Iterable) -> frozenset[Ablation]:
    out = set()
    for a in ablations or ():
        out.add(ABLATION_ALIASES.get(a) or Ablation(a))
    return frozenset(out)


def render(task_prompt: TaskPrompt | None, utterance_prompt: UtterancePrompt, ablations: Iterable = ()) -> PromptBundle:
    abl = _norm_ablations(ablations)
    if Ablation.NO_TASK_PROMPT in abl and Ablation.GIBBERISH_TASK_PROMPT in abl:
        raise PromptError("no_task_prompt and gibberish_task_prompt are mutually exclusive")
    if Ablation.NO_HYPOTHESIS_COST in abl and utterance_prompt.costs_included:
        raise PromptError("no_hypothesis_cost requested but the utterance-prompt carries costs")
    if Ablation.NO_TASK_PROMPT in abl:
        return PromptBundle(None, utterance_prompt, utterance_prompt.text, abl)
    if task_prompt is None:
        raise PromptError("task_prompt is required unless no_task_prompt is set")
    head = GIBBERISH_TASK_PROMPT if Ablation.GIBBERISH_TASK_PROMPT in abl else task_prompt.text
    return PromptBundle(task_prompt, utterance_prompt, f"{head} {utterance_prompt.text}", abl)


def whitespace_token_count(text: str) -> int:
    """Rough LLM token estimate: whitespace tokens times 1.3, rounded up."""
    return math.ceil(len(text.split()) * 1.3)


def enforce_budget(
    bundle: PromptBundle,
    nbest: NBestList,
    budget_tokens: int = DEFAULT_BUDGET,
    counter: Callable[[str], int] = whitespace_token_count,
) -> PromptBundle:
    """Drop highest-cost hypotheses until the rendered prompt fits the budget.

    ``nbest`` must be the list the bundle was serialized from; the 1-best is
    never dropped.
    """
    if counter(bundle.rendered) <= budget_tokens:
        return bundle
    up = bundle.utterance_prompt
    hyps = nbest.hypotheses[: up.hypothesis_count]
    for keep in range(len(hyps) - 1, 0, -1):
        sub = NBestList(nbest.utterance_id, hyps[:keep], nbest.n_requested)
        cand = render(
            bundle.task_prompt,
            serialize_utterance(sub, up.costs_included, up.cost_decimals),
            bundle.ablations,
        )
        if counter(cand.rendered) <= budget_tokens:
            return replace(cand, dropped=bundle.dropped + len(hyps) - keep)
    raise BudgetError(
        f"utterance {nbest.utterance_id!r}: prompt exceeds {budget_tokens} tokens even with only the 1-best"
    )


def build_prompt(
    nbest: NBestList,
    task,
    output_mode,
    n: int,
    ablations: Iterable = (),
    budget_tokens: int = DEFAULT_BUDGET,
    cost_decimals: int = 1,
    counter: Callable[[str], int] = whitespace_token_count,
) -> PromptBundle:
    """Serialize the first ``n`` hypotheses and render them with the matching task-prompt.

    ``n == 1`` gives a bare 1-best transcript with the 1-best task-prompt.
    """
    abl = _norm_ablations(ablations)
    sub = nbest.truncate(min(n, len(nbest)))
    one = n == 1
    include_costs = not one and Ablation.NO_HYPOTHESIS_COST not in abl
    up = serialize_utterance(sub, include_costs, cost_decimals)
    tp = lookup(task, InputMode.ONE_BEST if one else InputMode.N_BEST, output_mode)
    bundle = render(tp, up, abl)
    return enforce_budget(bundle, sub, budget_tokens, counter)


def nbest_from_prompt(utterance_id: str, rendered: str) -> NBestList:
    """Rebuild an n-best list from a rendered prompt.

    Lines without costs get cost 0 (uniform posterior downstream).
    """
    parsed = parse_utterance(split_rendered(rendered))
    hyps = tuple(Hypothesis(words, 0.0 if c is None else c) for words, c in parsed)
    # rounding can only preserve order, but guard against hand-edited prompts
    hyps = tuple(sorted(hyps, key=lambda h: h.cost))
    return NBestList(utterance_id, hyps, len(hyps))
