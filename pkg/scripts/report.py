import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

from scripts.config import REPO_ROOT
from scripts.utils import CoexSimError

SCHEMA_PATH = os.path.join(REPO_ROOT, "assets", "report_schema.json")

_JSON_TYPES = {
    "string": str,
    "integer": int,
    "number": (int, float),
    "object": dict,
    "array": list,
    "boolean": bool,
    "null": type(None),
}


class Verdict(str, Enum):
    SUCCESS = "success"
    PARTIAL = "partial"
    FAILED = "failed"


class InvalidReport(CoexSimError):
    pass


@dataclass
class AttackReport:
    kind: str
    verdict: Verdict
    metrics: Dict[str, Any] = field(default_factory=dict)
    trace_path: Optional[str] = None
    seed: int = 0
    attacker_core: str = ""
    crash_logs: List[str] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self):
        return {
            "kind": self.kind,
            "verdict": Verdict(self.verdict).value,
            "attacker_core": self.attacker_core,
            "seed": self.seed,
            "trace_path": self.trace_path,
            "metrics": _plain(self.metrics),
            "crash_logs": list(self.crash_logs),
            "error": self.error,
        }


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if hasattr(value, "item"):
        return value.item()
    return value


def load_schema(path=SCHEMA_PATH):
    with open(path, "r") as infile:
        return json.load(infile)


def _check_type(value, expected, where):
    names = expected if isinstance(expected, list) else [expected]
    for name in names:
        python_type = _JSON_TYPES[name]
        if isinstance(value, bool) and name in ("integer", "number"):
            continue
        if isinstance(value, python_type):
            return
    raise InvalidReport(f"{where}: expected {' or '.join(names)}, got {type(value).__name__}")


def _validate(value, schema, where):
    if "type" in schema:
        _check_type(value, schema["type"], where)
    if "enum" in schema and value not in schema["enum"]:
        raise InvalidReport(f"{where}: {value!r} is not one of {schema['enum']}")
    if isinstance(value, dict):
        for name in schema.get("required", []):
            if name not in value:
                raise InvalidReport(f"{where}: missing {name}")
        for name, sub in schema.get("properties", {}).items():
            if name in value:
                _validate(value[name], sub, f"{where}.{name}")
    if isinstance(value, list) and "items" in schema:
        for index, item in enumerate(value):
            _validate(item, schema["items"], f"{where}[{index}]")


def validate_report(document, schema=None):
    schema = schema or load_schema()
    _validate(document, schema, "report")
    for kind_rule in schema.get("x-metrics-required", {}).get(document.get("kind"), []):
        if document["verdict"] == Verdict.SUCCESS.value and kind_rule not in document["metrics"]:
            raise InvalidReport(f"report.metrics: successful {document['kind']} run lacks {kind_rule}")
    return document


def write_report(report: AttackReport, out_dir) -> str:
    document = validate_report(report.to_dict())
    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as outfile:
        json.dump(document, outfile, indent=4, sort_keys=True)
    return path
