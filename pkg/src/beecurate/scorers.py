"""Evaluators that attach a difficulty loss to every sample.

Two routes produce loss records: a built-in character-bigram scorer so
the whole pipeline runs with no external model, and an importer that
validates loss files written by external evaluators (see the ``adapter``
package for a reference implementation).

The toy scorer deliberately looks only at the answer text.  Downstream
filtering needs nothing more than one real-valued loss per sample, so
images and questions are ignored here; a real evaluator conditions on
them and ships its losses through :func:`import_external_losses`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .records import LossRecord, RecordError, SampleRecord, read_losses

TOY_SCORER_ID = "toy-bigram-v1"

# Multi-character sentinels cannot collide with single-character symbols.
START = "<s>"
UNK = "<unk>"


@dataclass(frozen=True)
class BigramModel:
    """Add-one smoothed character bigram model.

    ``alphabet`` holds every distinct answer character plus the start and
    unknown sentinels; the smoothing denominator uses its full size, so
    a context with no observed continuations yields the uniform
    probability ``1 / len(alphabet)`` for every next symbol.
    """

    alphabet: tuple[str, ...]
    counts: dict[tuple[str, str], int] = field(repr=False)
    context_totals: dict[str, int] = field(repr=False)
    scorer_id: str = TOY_SCORER_ID

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    def prob(self, context: str, symbol: str) -> float:
        c = self.counts.get((context, symbol), 0)
        total = self.context_totals.get(context, 0)
        return (c + 1) / (total + self.vocab_size)


def train_bigram(corpus: Sequence[SampleRecord]) -> BigramModel:
    """Tally bigram counts over every answer, each prefixed by the start marker."""
    if not corpus:
        raise ValueError("cannot train a bigram model on an empty corpus")
    chars: set[str] = set()
    counts: dict[tuple[str, str], int] = {}
    context_totals: dict[str, int] = {}
    for sample in corpus:
        prev = START
        for ch in sample.answer:
            chars.add(ch)
            key = (prev, ch)
            counts[key] = counts.get(key, 0) + 1
            context_totals[prev] = context_totals.get(prev, 0) + 1
            prev = ch
    alphabet = tuple(sorted(chars)) + (START, UNK)
    return BigramModel(alphabet=alphabet, counts=counts, context_totals=context_totals)


def score_sample(model: BigramModel, sample: SampleRecord) -> LossRecord:
    """Mean negative log-likelihood per answer character, in nats.

    Characters outside the training alphabet are mapped to the reserved
    unknown symbol, which has zero counts everywhere.
    """
    known = set(model.alphabet)
    prev = START
    total = 0.0
    for ch in sample.answer:
        symbol = ch if ch in known else UNK
        total -= math.log(model.prob(prev, symbol))
        prev = symbol
    return LossRecord(
        sample_id=sample.id, loss=total / len(sample.answer), scorer_id=model.scorer_id
    )


def score_dataset(
    samples: Sequence[SampleRecord], model: BigramModel, workers: int = 1
) -> list[LossRecord]:
    """Score every sample, preserving input order.

    Scoring is a pure function of (model, sample), so fanning out over
    threads cannot change the result; ``workers`` only trades wall time.
    """
    if workers > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda s: score_sample(model, s), samples))
    return [score_sample(model, s) for s in samples]


def import_external_losses(path: str | Path, expected_ids: set[str]) -> list[LossRecord]:
    """Validate a losses file produced by an external evaluator.

    The file must contain exactly one record per expected id; every loss
    is finite and non-negative by the record contract.  Errors name the
    first offending id.
    """
    records = read_losses(path)
    seen: set[str] = set()
    for record in records:
        if record.sample_id in seen:
            raise RecordError(f"{path}: duplicate loss for sample {record.sample_id!r}")
        if record.sample_id not in expected_ids:
            raise RecordError(f"{path}: loss for unknown sample {record.sample_id!r}")
        seen.add(record.sample_id)
    missing = sorted(expected_ids - seen)
    if missing:
        raise RecordError(f"{path}: no loss record for sample {missing[0]!r}")
    return records
