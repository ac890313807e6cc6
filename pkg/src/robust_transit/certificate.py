from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any

import numpy as np

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


class CertificateError(ValueError):
    pass


def _plain(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        if math.isnan(f):
            return "nan"
        return f
    return v


@dataclass
class Certificate:
    """Verdict of one hypothesis check, with its margin and echoed parameters."""

    check_name: str
    verdict: str
    margin: float
    resolution: Any = None
    parameters: dict = field(default_factory=dict)
    elapsed: float = 0.0
    details: dict = field(default_factory=dict)
    note: str = ""

    def __post_init__(self):
        if self.verdict not in (PASS, FAIL, INCONCLUSIVE):
            raise CertificateError(f"unknown verdict {self.verdict!r}")
        if self.verdict == PASS and not self.margin > 0:
            raise CertificateError(f"{self.check_name}: a pass needs a positive margin, got {self.margin}")

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_json(self, timing: bool = True) -> dict:
        d = {
            "check_name": self.check_name,
            "verdict": self.verdict,
            "margin": self.margin,
            "resolution": self.resolution,
            "parameters": self.parameters,
            "details": self.details,
            "note": self.note,
        }
        if timing:
            d["elapsed"] = self.elapsed
        return _plain(d)

    def line(self) -> str:
        return f"{self.check_name:<32s} {self.verdict.upper():<12s} margin={self.margin:.6g}"


def verdict_from(ok: bool) -> str:
    return PASS if ok else FAIL


@contextmanager
def stopwatch():
    box = {"t0": time.perf_counter()}
    yield box
    box["elapsed"] = time.perf_counter() - box["t0"]


def dumps(obj, **kw) -> str:
    return json.dumps(_plain(obj), sort_keys=True, **kw)
