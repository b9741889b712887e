"""Sentence-pair examples and the tab-separated dataset format."""

import logging
from dataclasses import dataclass
from typing import Optional

from .errors import FormatError
from .text import tokenize

log = logging.getLogger(__name__)

LABELS = {"entails": 1, "entailment": 1, "1": 1, "neutral": 0, "0": 0}


@dataclass
class PairExample:
    premise: list
    hypothesis: list
    label: Optional[int]
    premise_text: str = ""
    hypothesis_text: str = ""

    @classmethod
    def from_text(cls, premise: str, hypothesis: str, label=None):
        return cls(tokenize(premise), tokenize(hypothesis), label, premise, hypothesis)


def parse_label(token: str) -> int:
    try:
        return LABELS[token.strip().lower()]
    except KeyError:
        raise FormatError(f"unknown label {token!r}") from None


def load_tsv(path, strict=False, require_label=True) -> list:
    """Read ``premise<TAB>hypothesis<TAB>label`` lines.

    With ``require_label=False`` the label column is optional (prediction
    input). Bad lines raise :class:`FormatError` in strict mode and are
    logged and skipped otherwise.
    """
    examples = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            try:
                examples.append(_parse_line(line, require_label))
            except FormatError as exc:
                err = FormatError(str(exc), line=lineno, path=path)
                if strict:
                    raise err from None
                skipped += 1
                log.warning("skipping %s", err)
    if skipped:
        log.warning("%s: skipped %d malformed line(s)", path, skipped)
    return examples


def _parse_line(line, require_label):
    fields = line.split("\t")
    if require_label and len(fields) != 3:
        raise FormatError(f"expected 3 tab-separated fields, got {len(fields)}")
    if not require_label and len(fields) not in (2, 3):
        raise FormatError(f"expected 2 or 3 tab-separated fields, got {len(fields)}")
    label = parse_label(fields[2]) if len(fields) == 3 else None
    ex = PairExample.from_text(fields[0], fields[1], label)
    if not ex.premise or not ex.hypothesis:
        raise FormatError("empty premise or hypothesis")
    return ex


def label_counts(examples) -> dict:
    counts = {0: 0, 1: 0}
    for ex in examples:
        counts[ex.label] += 1
    return counts
