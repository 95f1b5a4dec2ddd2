"""Generic remote-model backend speaking a chat-completion wire protocol.

Model choice, endpoint, and credentials come from environment variables so
backbones are interchangeable configuration:

    VDSS_MODEL_ENDPOINT   e.g. https://host/v1/chat/completions
    VDSS_MODEL_ID         model identifier sent in the request body
    VDSS_MODEL_API_KEY    bearer token (optional)

Each role has a prompt template under ``prompts/<role>.txt`` with a
``{payload}`` placeholder for the JSON-encoded input message. The model is
expected to answer with a single JSON object; anything else is malformed
output and handled by the caller's retry policy.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from pathlib import Path
from typing import Any, Optional

from ..contracts import canonical_json
from . import AgentRole, Backend, BackendUnavailable

DEFAULT_PROMPT_DIR = Path(__file__).resolve().parents[3] / "prompts"


def load_prompt_templates(prompt_dir: Optional[Path] = None) -> dict:
    directory = Path(prompt_dir) if prompt_dir else DEFAULT_PROMPT_DIR
    templates = {}
    for role in AgentRole:
        path = directory / f"{role.value}.txt"
        if path.exists():
            templates[role] = path.read_text(encoding="utf-8")
    return templates


def _extract_json(text: str) -> Any:
    """Parse the first JSON object found in a model reply."""
    text = text.strip()
    if text.startswith("```"):
        text = text.strip("`")
        if text.startswith("json"):
            text = text[4:]
    start = text.find("{")
    end = text.rfind("}")
    if start == -1 or end <= start:
        return {"unparseable": text[:80]}
    try:
        return json.loads(text[start:end + 1])
    except json.JSONDecodeError:
        return {"unparseable": text[:80]}


class RemoteChatBackend(Backend):
    def __init__(self, endpoint: Optional[str] = None, model_id: Optional[str] = None,
                 api_key: Optional[str] = None, prompt_dir: Optional[Path] = None,
                 timeout_s: float = 120.0):
        self.endpoint = endpoint or os.environ.get("VDSS_MODEL_ENDPOINT", "")
        self.model_id = model_id or os.environ.get("VDSS_MODEL_ID", "")
        self.api_key = api_key or os.environ.get("VDSS_MODEL_API_KEY", "")
        self.timeout_s = timeout_s
        self.templates = load_prompt_templates(prompt_dir)
        if not self.endpoint:
            raise BackendUnavailable("VDSS_MODEL_ENDPOINT is not configured")

    def build_request(self, role: AgentRole, payload: Any) -> dict:
        template = self.templates.get(role, "Respond with a JSON object for this input:\n{payload}")
        prompt = template.replace("{payload}", canonical_json(payload))
        return {
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }

    def run(self, role: AgentRole, payload: Any) -> Any:
        body = json.dumps(self.build_request(role, payload)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        request = urllib.request.Request(self.endpoint, data=body, headers=headers)
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as response:
                reply = json.loads(response.read().decode("utf-8"))
        except (urllib.error.URLError, OSError) as exc:
            raise BackendUnavailable(f"model endpoint unreachable: {exc}") from exc
        try:
            content = reply["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            return {"unparseable": "missing choices in reply"}
        return _extract_json(content)
