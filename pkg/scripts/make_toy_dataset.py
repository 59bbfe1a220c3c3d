#!/usr/bin/env python3
"""Regenerate the bundled toy doc-QA dataset (data/toy_samples.jsonl).

200 synthetic document question/answer samples over four document
categories, generated from a fixed seed so the committed file is stable.
Answers vary in length and vocabulary so the bigram scorer produces a
spread of losses; a handful of deliberately garbled answers sit in the
upper tail of that distribution.
"""

from __future__ import annotations

import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from beecurate.records import SampleRecord, write_samples

SEED = 20240611
COUNT = 200

SECTIONS = ["revenue", "net profit", "operating cost", "tax provision", "cash flow"]
PERIODS = ["Q1", "Q2", "Q3", "Q4", "the first half", "the full year"]
ORGS = [
    "the municipal registry office",
    "the provincial tax bureau",
    "the chamber of commerce",
    "the customs administration",
]
CLAUSES = ["payment terms", "delivery schedule", "warranty period", "liability cap"]
UNITS = ["CNY", "USD", "units", "percent"]


def _amount(rng: random.Random) -> str:
    return f"{rng.randint(1, 999)},{rng.randint(0, 999):03d}.{rng.randint(0, 99):02d}"


def _printed_text(rng: random.Random, i: int) -> tuple[str, str]:
    clause = rng.choice(CLAUSES)
    days = rng.randint(7, 120)
    question = f"What does the contract say about the {clause}?"
    answer = (
        f"The contract fixes the {clause} at {days} days from the date of signature, "
        f"subject to written confirmation by both parties."
    )
    return question, answer


def _table(rng: random.Random, i: int) -> tuple[str, str]:
    section = rng.choice(SECTIONS)
    period = rng.choice(PERIODS)
    amount = _amount(rng)
    unit = rng.choice(UNITS)
    question = f"What is the {section} reported for {period}?"
    answer = f"The table reports a {section} of {amount} {unit} for {period}."
    return question, answer


def _seal(rng: random.Random, i: int) -> tuple[str, str]:
    org = rng.choice(ORGS)
    page = rng.randint(1, 40)
    question = f"Which organization issued the seal on page {page}?"
    answer = f"The round red seal on page {page} was issued by {org}."
    return question, answer


def _chart(rng: random.Random, i: int) -> tuple[str, str]:
    period = rng.choice(PERIODS)
    peak = rng.randint(10, 950)
    question = "What is the peak value shown in the bar chart?"
    answer = f"The chart peaks at {peak} in {period}, then declines steadily."
    return question, answer


def _garbled(rng: random.Random, i: int) -> tuple[str, str]:
    # OCR-style noise: rare characters and no natural bigram structure.
    junk = "".join(rng.choice("#@%&*{}[]|\\~^=+<>") for _ in range(rng.randint(20, 40)))
    question = "What is the invoice number in the header?"
    answer = f"INV{junk}{rng.randint(100, 999)}"
    return question, answer


GENERATORS = [
    ("printed_text", _printed_text, 80),
    ("tables", _table, 60),
    ("seals", _seal, 20),
    ("charts", _chart, 32),
    ("printed_text_noisy", _garbled, 8),
]


def build_samples() -> list[SampleRecord]:
    rng = random.Random(SEED)
    samples: list[SampleRecord] = []
    i = 0
    for category, generate, count in GENERATORS:
        for _ in range(count):
            i += 1
            question, answer = generate(rng, i)
            image_ref = None
            if rng.random() < 0.8:
                image_ref = f"images/doc_{i:04d}.png"
            samples.append(
                SampleRecord(
                    id=f"toy-{i:04d}",
                    question=question,
                    answer=answer,
                    image_ref=image_ref,
                    metadata={"category": category},
                )
            )
    assert len(samples) == COUNT
    return samples


def main() -> None:
    out = Path(__file__).resolve().parents[1] / "data" / "toy_samples.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_samples(build_samples(), out)
    print(f"wrote {COUNT} samples to {out}")


if __name__ == "__main__":
    main()
