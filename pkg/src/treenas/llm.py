"""Chat-completion endpoints: HTTP, replay mock, and in-memory scripted."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Protocol

import requests

from .errors import EndpointTimeout, TransportError


@dataclass
class Message:
    role: str  # system | user | assistant
    text: str


@dataclass
class ChatTranscript:
    """Ordered conversation; the first message is always the system prompt."""

    messages: list[Message] = field(default_factory=list)

    def __post_init__(self):
        if self.messages and self.messages[0].role != "system":
            raise ValueError("transcript must start with the system prompt")

    def append(self, role: str, text: str) -> None:
        if not self.messages and role != "system":
            raise ValueError("transcript must start with the system prompt")
        self.messages.append(Message(role, text))

    def as_payload(self) -> list[dict[str, str]]:
        return [{"role": m.role, "content": m.text} for m in self.messages]

    def digest(self) -> str:
        blob = json.dumps([[m.role, m.text] for m in self.messages],
                          ensure_ascii=False).encode()
        return hashlib.sha256(blob).hexdigest()


class LLMEndpoint(Protocol):
    def complete(self, transcript: ChatTranscript) -> str:
        """Return the assistant reply for the transcript so far."""


def complete(transcript: ChatTranscript, endpoint: LLMEndpoint) -> str:
    """Ask the endpoint for the next assistant turn and record it."""
    reply = endpoint.complete(transcript)
    transcript.append("assistant", reply)
    return reply


class HttpEndpoint:
    """Chat-completion style HTTP JSON endpoint."""

    def __init__(self, url: str, model: str = "default", temperature: float = 0.7,
                 token: str | None = None, timeout: float = 120.0):
        self.url = url
        self.model = model
        self.temperature = temperature
        self.token = token
        self.timeout = timeout

    def complete(self, transcript: ChatTranscript) -> str:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        body = {
            "model": self.model,
            "messages": transcript.as_payload(),
            "temperature": self.temperature,
        }
        try:
            resp = requests.post(self.url, json=body, headers=headers, timeout=self.timeout)
        except requests.Timeout as exc:
            raise EndpointTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code != 200:
            raise TransportError(f"endpoint returned {resp.status_code}")
        try:
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError) as exc:
            raise TransportError(f"malformed endpoint response: {exc}") from exc


class MockEndpoint:
    """Hermetic replay endpoint: transcript digest -> scripted reply text."""

    def __init__(self, script: dict[str, str]):
        self.script = dict(script)

    @classmethod
    def from_file(cls, path) -> "MockEndpoint":
        with open(path) as fh:
            return cls(json.load(fh))

    def complete(self, transcript: ChatTranscript) -> str:
        digest = transcript.digest()
        if digest not in self.script:
            raise TransportError(f"no scripted reply for transcript {digest[:12]}...")
        return self.script[digest]


class ScriptedEndpoint:
    """Test double that plays back replies in order."""

    def __init__(self, replies: list[str]):
        self.replies = list(replies)
        self.requests: list[ChatTranscript] = []

    def complete(self, transcript: ChatTranscript) -> str:
        self.requests.append(ChatTranscript([Message(m.role, m.text)
                                             for m in transcript.messages]))
        if not self.replies:
            raise TransportError("scripted endpoint exhausted")
        return self.replies.pop(0)
