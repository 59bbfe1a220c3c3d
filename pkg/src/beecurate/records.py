"""Shared record types and line-delimited JSON I/O for the curation pipeline.

Sample files, loss files, and dataset manifests are the only interchange
formats between the scorer, the filter, and any external evaluator:

* samples: one JSON object per line with keys ``id``, ``question``,
  ``answer``, optional ``image_ref``, optional ``metadata``.
* losses: one JSON object per line with keys ``sample_id``, ``loss``,
  ``scorer_id``.  Lines starting with ``#`` are treated as comments so
  external evaluators can document themselves in a header line.
* manifest: a single JSON object with keys ``name``, ``sample_ids``,
  ``source_uri``, ``created_at`` and optional ``provenance``.

All record types are immutable after construction and safe to share
across concurrent readers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


class RecordError(ValueError):
    """A record or record file violates the format contract."""


def _reject_json_constant(token: str) -> float:
    raise RecordError(f"non-finite number {token!r} is not allowed in record files")


def _parse_line(line: str, lineno: int, path: Path) -> dict:
    try:
        obj = json.loads(line, parse_constant=_reject_json_constant)
    except RecordError:
        raise
    except json.JSONDecodeError as exc:
        raise RecordError(f"{path}:{lineno}: malformed record line: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise RecordError(f"{path}:{lineno}: expected a JSON object, got {type(obj).__name__}")
    return obj


@dataclass(frozen=True)
class SampleRecord:
    """One multimodal training sample; ``image_ref`` is an opaque reference."""

    id: str
    question: str
    answer: str
    image_ref: str | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise RecordError("sample id must be non-empty")
        if not self.answer:
            raise RecordError(f"sample {self.id!r} has an empty answer")

    def to_json(self) -> str:
        obj: dict = {"id": self.id, "question": self.question, "answer": self.answer}
        if self.image_ref is not None:
            obj["image_ref"] = self.image_ref
        if self.metadata:
            obj["metadata"] = self.metadata
        return json.dumps(obj, ensure_ascii=False)


@dataclass(frozen=True)
class LossRecord:
    """Per-sample forward cross-entropy loss, in nats per answer token."""

    sample_id: str
    loss: float
    scorer_id: str

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise RecordError("loss record needs a non-empty sample_id")
        if not math.isfinite(self.loss):
            raise RecordError(f"loss for sample {self.sample_id!r} is not finite: {self.loss!r}")
        if self.loss < 0:
            raise RecordError(f"loss for sample {self.sample_id!r} is negative: {self.loss!r}")

    def to_json(self) -> str:
        return json.dumps(
            {"sample_id": self.sample_id, "loss": self.loss, "scorer_id": self.scorer_id}
        )


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered list of sample ids defining a (possibly filtered) dataset."""

    name: str
    sample_ids: tuple[str, ...]
    source_uri: str
    created_at: str
    provenance: dict | None = None

    def __post_init__(self) -> None:
        if len(set(self.sample_ids)) != len(self.sample_ids):
            seen: set[str] = set()
            for sid in self.sample_ids:
                if sid in seen:
                    raise RecordError(f"manifest {self.name!r} repeats sample id {sid!r}")
                seen.add(sid)


_SAMPLE_KEYS = {"id", "question", "answer", "image_ref", "metadata"}
_LOSS_KEYS = {"sample_id", "loss", "scorer_id"}


def read_samples(path: str | Path) -> list[SampleRecord]:
    """Read a samples file, preserving file order.

    Raises :class:`RecordError` naming the offending line or id on
    malformed lines, duplicate ids, or empty answers.
    """
    path = Path(path)
    records: list[SampleRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            obj = _parse_line(line, lineno, path)
            unknown = set(obj) - _SAMPLE_KEYS
            if unknown:
                raise RecordError(f"{path}:{lineno}: unknown sample keys {sorted(unknown)}")
            for key in ("id", "question", "answer"):
                if not isinstance(obj.get(key), str):
                    raise RecordError(f"{path}:{lineno}: missing or non-string {key!r}")
            image_ref = obj.get("image_ref")
            if image_ref is not None and not isinstance(image_ref, str):
                raise RecordError(f"{path}:{lineno}: image_ref must be a string")
            metadata = obj.get("metadata", {})
            if not isinstance(metadata, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
            ):
                raise RecordError(f"{path}:{lineno}: metadata must map strings to strings")
            record = SampleRecord(
                id=obj["id"],
                question=obj["question"],
                answer=obj["answer"],
                image_ref=image_ref,
                metadata=dict(metadata),
            )
            if record.id in seen:
                raise RecordError(f"{path}: duplicate sample id {record.id!r}")
            seen.add(record.id)
            records.append(record)
    return records


def write_samples(records: Iterable[SampleRecord], path: str | Path) -> None:
    path = Path(path)
    seen: set[str] = set()
    lines = []
    for record in records:
        if record.id in seen:
            raise RecordError(f"duplicate sample id {record.id!r}")
        seen.add(record.id)
        lines.append(record.to_json())
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_losses(path: str | Path) -> list[LossRecord]:
    """Read a losses file; blank lines and ``#`` comment lines are skipped."""
    path = Path(path)
    records: list[LossRecord] = []
    seen: set[tuple[str, str]] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            obj = _parse_line(line, lineno, path)
            unknown = set(obj) - _LOSS_KEYS
            if unknown:
                raise RecordError(f"{path}:{lineno}: unknown loss keys {sorted(unknown)}")
            if not isinstance(obj.get("sample_id"), str) or not isinstance(
                obj.get("scorer_id"), str
            ):
                raise RecordError(f"{path}:{lineno}: missing sample_id or scorer_id")
            loss = obj.get("loss")
            if isinstance(loss, bool) or not isinstance(loss, (int, float)):
                raise RecordError(f"{path}:{lineno}: loss must be a decimal number")
            try:
                record = LossRecord(
                    sample_id=obj["sample_id"], loss=float(loss), scorer_id=obj["scorer_id"]
                )
            except RecordError as exc:
                raise RecordError(f"{path}:{lineno}: {exc}") from exc
            key = (record.sample_id, record.scorer_id)
            if key in seen:
                raise RecordError(
                    f"{path}: duplicate loss record for sample {record.sample_id!r} "
                    f"from scorer {record.scorer_id!r}"
                )
            seen.add(key)
            records.append(record)
    return records


def write_losses(
    records: Sequence[LossRecord], path: str | Path, header: str | None = None
) -> None:
    """Write a losses file; ``header`` becomes a leading ``#`` comment line.

    Loss values round-trip exactly: they are serialized with the shortest
    decimal representation that parses back to the same float64.
    """
    path = Path(path)
    seen: set[tuple[str, str]] = set()
    lines: list[str] = []
    if header is not None:
        lines.append("# " + header.replace("\n", " "))
    for record in records:
        if not math.isfinite(record.loss):
            raise RecordError(f"refusing to write non-finite loss for {record.sample_id!r}")
        key = (record.sample_id, record.scorer_id)
        if key in seen:
            raise RecordError(f"duplicate loss record for sample {record.sample_id!r}")
        seen.add(key)
        lines.append(record.to_json())
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    obj = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise RecordError(f"{path}: manifest must be a JSON object")
    for key in ("name", "source_uri", "created_at"):
        if not isinstance(obj.get(key), str):
            raise RecordError(f"{path}: missing or non-string manifest key {key!r}")
    ids = obj.get("sample_ids")
    if not isinstance(ids, list) or not all(isinstance(s, str) for s in ids):
        raise RecordError(f"{path}: sample_ids must be an array of strings")
    provenance = obj.get("provenance")
    if provenance is not None and not isinstance(provenance, dict):
        raise RecordError(f"{path}: provenance must be an object")
    return DatasetManifest(
        name=obj["name"],
        sample_ids=tuple(ids),
        source_uri=obj["source_uri"],
        created_at=obj["created_at"],
        provenance=provenance,
    )


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    obj: dict = {
        "name": manifest.name,
        "sample_ids": list(manifest.sample_ids),
        "source_uri": manifest.source_uri,
        "created_at": manifest.created_at,
    }
    if manifest.provenance is not None:
        obj["provenance"] = manifest.provenance
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def verify_manifest(manifest: DatasetManifest, samples: Sequence[SampleRecord]) -> None:
    """Reject manifests that reference ids absent from the sample file."""
    known = {s.id for s in samples}
    dangling = [sid for sid in manifest.sample_ids if sid not in known]
    if dangling:
        raise RecordError(
            f"manifest {manifest.name!r} references unknown sample ids: {dangling[:5]}"
            + ("..." if len(dangling) > 5 else "")
        )
