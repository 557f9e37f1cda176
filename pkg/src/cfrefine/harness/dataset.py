"""Dataset ingestion from JSON-lines files."""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from cfrefine.core import Instance, LabelSpace
from cfrefine.errors import DatasetError, SchemaError
from cfrefine.harness.io import read_jsonl


@dataclass(frozen=True)
class DatasetSchema:
    labels: LabelSpace
    fields: tuple[str, ...] = ("text",)
    edit_field: str | None = None
    id_key: str = "id"
    label_key: str = "label"
    target_key: str = "target_label"

    def __post_init__(self) -> None:
        object.__setattr__(self, "fields", tuple(self.fields))
        if not self.fields:
            raise SchemaError("schema needs at least one text field")
        edit = self.edit_field or self.fields[0]
        if edit not in self.fields:
            raise SchemaError(f"edit field {edit!r} is not one of {self.fields}")
        object.__setattr__(self, "edit_field", edit)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DatasetSchema":
        try:
            labels = LabelSpace(tuple(d["labels"]))
        except KeyError:
            raise SchemaError("dataset schema needs 'labels'") from None
        return cls(
            labels=labels,
            fields=tuple(d.get("fields", ("text",))),
            edit_field=d.get("edit_field"),
            id_key=d.get("id_key", "id"),
            label_key=d.get("label_key", "label"),
            target_key=d.get("target_key", "target_label"),
        )


def load_dataset(path: str | Path, schema: DatasetSchema) -> list[Instance]:
    """Read and validate one instance per line; errors carry the line number."""
    out: list[Instance] = []
    seen: set[str] = set()
    for lineno, rec in read_jsonl(path):
        if schema.label_key not in rec:
            raise SchemaError(f"line {lineno}: record has no {schema.label_key!r}")
        label = rec[schema.label_key]
        if label not in schema.labels:
            raise SchemaError(f"line {lineno}: unknown label {label!r}")
        target = rec.get(schema.target_key)
        if target is not None and target not in schema.labels:
            raise SchemaError(f"line {lineno}: unknown target label {target!r}")
        fields = {}
        for name in schema.fields:
            value = rec.get(name)
            if not isinstance(value, str):
                raise DatasetError(f"field {name!r} missing or not a string", line=lineno)
            fields[name] = value
        rid = str(rec.get(schema.id_key, lineno))
        if rid in seen:
            raise DatasetError(f"duplicate id {rid!r}", line=lineno)
        seen.add(rid)
        out.append(Instance(rid, fields, label, schema.edit_field, target))
    return out


def sample_instances(instances: Sequence[Instance], n: int | None, seed: int) -> list[Instance]:
    """Seeded draw of ``n`` instances, returned in file order."""
    if n is None or n >= len(instances):
        return list(instances)
    picked = set(random.Random(seed).sample(range(len(instances)), n))
    return [inst for i, inst in enumerate(instances) if i in picked]
