"""Audit record for one applied perturbation (text noise or graph edit)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class NoiseRecord:
    kind: str
    affected: tuple[str, ...]
    original: Any
    replacement: Any
    details: dict = field(default_factory=dict, compare=True)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "affected": list(self.affected),
            "original": self.original,
            "replacement": self.replacement,
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseRecord":
        return cls(d["kind"], tuple(d["affected"]), d["original"], d["replacement"], dict(d.get("details", {})))
