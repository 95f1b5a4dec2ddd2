"""Fault-injecting backend wrapper for failure-rate studies.

Corrupts the wrapped backend's output with a configured per-attempt
probability, simulating a model that intermittently emits schema-violating
payloads. With retry budget r and malformed probability p, the per-call
failure probability is p^(r+1).
"""

from __future__ import annotations

from typing import Any

import numpy as np

from . import AgentRole, Backend


class FaultInjectingBackend(Backend):
    def __init__(self, inner: Backend, fault_rate: float, seed: int = 0):
        if not 0.0 <= fault_rate <= 1.0:
            raise ValueError("fault_rate must be within [0, 1]")
        self.inner = inner
        self.fault_rate = fault_rate
        self._rng = np.random.default_rng(seed)

    def run(self, role: AgentRole, payload: Any) -> Any:
        out = self.inner.run(role, payload)
        if self._rng.random() < self.fault_rate:
            return self._corrupt(out)
        return out

    def _corrupt(self, payload: Any) -> Any:
        if isinstance(payload, dict) and payload:
            corrupted = dict(payload)
            if self._rng.random() < 0.5:
                corrupted["hallucinated_field"] = "unexpected"
            else:
                corrupted.pop(sorted(corrupted.keys())[0])
                corrupted["hallucinated_field"] = "unexpected"
            return corrupted
        return {"hallucinated_field": "unexpected"}
