"""Explanation reports: checksummed JSON with base64 float64 tensors."""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

REPORT_VERSION = "tracer-report/1"


class ReportError(ValueError):
    pass


def encode_tensor(a: np.ndarray) -> dict[str, Any]:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_tensor(obj: dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    shape = tuple(obj["shape"])
    if len(raw) != 8 * int(np.prod(shape)):
        raise ReportError(f"tensor payload has {len(raw)} bytes for shape {shape}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=True, allow_nan=False)


def digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def write_document(path: str | Path, version: str, payload: dict[str, Any]) -> None:
    doc = {"version": version, "checksum": digest(payload), "payload": payload}
    Path(path).write_text(canonical_json(doc) + "\n", encoding="utf-8")


def read_document(path: str | Path, version: str) -> dict[str, Any]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("version") != version:
        raise ReportError(f"{path}: version {doc.get('version')!r}, expected {version!r}")
    if digest(doc.get("payload")) != doc.get("checksum"):
        raise ReportError(f"{path}: checksum mismatch")
    return doc["payload"]


@dataclass
class ExplanationReport:
    sample_id: str
    predicted: int
    attribution: np.ndarray
    mask: np.ndarray
    ace: dict[str, float]
    graph: dict[str, Any] | str
    config_digest: str
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.attribution = np.asarray(self.attribution, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if not np.all(np.isin(self.mask, (0.0, 1.0))):
            raise ReportError("mask values must be 0 or 1")
        if not np.all(np.isfinite(self.attribution)):
            raise ReportError("attribution map must be finite")

    def to_payload(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "predicted": int(self.predicted),
            "attribution": encode_tensor(self.attribution),
            "mask": encode_tensor(self.mask),
            "ace": {k: float(v) for k, v in self.ace.items()},
            "graph": self.graph,
            "config_digest": self.config_digest,
            "metadata": self.metadata,
        }

    @classmethod
    def from_payload(cls, p: dict[str, Any]) -> "ExplanationReport":
        return cls(
            sample_id=p["sample_id"],
            predicted=p["predicted"],
            attribution=decode_tensor(p["attribution"]),
            mask=decode_tensor(p["mask"]),
            ace=p["ace"],
            graph=p["graph"],
            config_digest=p["config_digest"],
            metadata=p.get("metadata", {}),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExplanationReport):
            return NotImplemented
        return canonical_json(self.to_payload()) == canonical_json(other.to_payload())


def save_report(report: ExplanationReport, path: str | Path) -> None:
    write_document(path, REPORT_VERSION, report.to_payload())


def load_report(path: str | Path) -> ExplanationReport:
    return ExplanationReport.from_payload(read_document(path, REPORT_VERSION))
