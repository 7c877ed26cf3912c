"""Evaluator clients: synthetic in-process, JSON-lines subprocess, and HTTP."""

from __future__ import annotations

import json
import shlex
import subprocess
from dataclasses import dataclass
from typing import Callable, Protocol

import requests

from .configtree import ArchTree, attr, render_config
from .errors import EvaluatorUnavailable
from .feasibility import synthetic_cost


@dataclass
class EvalResult:
    ok: bool
    reason: str = ""
    params: int | None = None
    flops: int | None = None
    metric: float | None = None


class Evaluator(Protocol):
    def dry_run(self, tree: ArchTree) -> EvalResult: ...
    def train(self, tree: ArchTree) -> float: ...


class SyntheticEvaluator:
    """Hermetic evaluator: synthetic cost model plus a designated-module fitness.

    The fitness rewards every occurrence of one module type and charges a small
    size penalty, so searches have a real (and known) optimum direction.
    """

    def __init__(self, designated: str = "MBConvBlock",
                 cost_model: Callable[[ArchTree], tuple[int, int]] = synthetic_cost):
        self.designated = designated
        self.cost_model = cost_model

    def dry_run(self, tree: ArchTree) -> EvalResult:
        params, flops = self.cost_model(tree)
        return EvalResult(ok=True, params=params, flops=flops)

    def train(self, tree: ArchTree) -> float:
        params, _ = self.cost_model(tree)
        count = sum(1 for _, name in attr(tree) if name == self.designated)
        return 10.0 * count - params / 10_000.0


class SubprocessEvaluator:
    """Talks JSON-lines to an out-of-process worker (one request per line)."""

    def __init__(self, command: str, dataset: str = "synthetic", epochs: int = 1,
                 seed: int = 0, input_shape: tuple[int, int, int] = (3, 32, 32),
                 timeout: float = 600.0):
        self.command = command
        self.dataset = dataset
        self.epochs = epochs
        self.seed = seed
        self.input_shape = list(input_shape)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None

    def _process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    shlex.split(self.command), stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE, text=True, bufsize=1)
            except OSError as exc:
                raise EvaluatorUnavailable(f"cannot launch evaluator: {exc}") from exc
        return self._proc

    def _request(self, payload: dict) -> dict:
        proc = self._process()
        try:
            proc.stdin.write(json.dumps(payload) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise EvaluatorUnavailable(f"evaluator pipe broke: {exc}") from exc
        if not line:
            raise EvaluatorUnavailable("evaluator closed its output")
        try:
            return json.loads(line)
        except ValueError as exc:
            raise EvaluatorUnavailable(f"evaluator sent malformed JSON: {exc}") from exc

    def dry_run(self, tree: ArchTree) -> EvalResult:
        reply = self._request({
            "mode": "dry_run",
            "config_text": render_config(tree),
            "input_shape": self.input_shape,
            "seed": self.seed,
        })
        return EvalResult(ok=reply.get("ok", False), reason=reply.get("error") or "",
                          params=reply.get("params"), flops=reply.get("flops"),
                          metric=reply.get("metric"))

    def train(self, tree: ArchTree) -> float:
        reply = self._request({
            "mode": "train",
            "config_text": render_config(tree),
            "dataset": self.dataset,
            "epochs": self.epochs,
            "seed": self.seed,
            "input_shape": self.input_shape,
        })
        if not reply.get("ok", False) or reply.get("metric") is None:
            raise EvaluatorUnavailable(f"training failed: {reply.get('error')}")
        return float(reply["metric"])

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)


class HttpEvaluator:
    """POSTs eval requests to an HTTP worker exposing /eval."""

    def __init__(self, url: str, dataset: str = "synthetic", epochs: int = 1,
                 seed: int = 0, input_shape: tuple[int, int, int] = (3, 32, 32),
                 timeout: float = 600.0):
        self.url = url.rstrip("/") + "/eval"
        self.dataset = dataset
        self.epochs = epochs
        self.seed = seed
        self.input_shape = list(input_shape)
        self.timeout = timeout

    def _request(self, payload: dict) -> dict:
        try:
            resp = requests.post(self.url, json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise EvaluatorUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise EvaluatorUnavailable(f"evaluator returned {resp.status_code}")
        return resp.json()

    def dry_run(self, tree: ArchTree) -> EvalResult:
        reply = self._request({"mode": "dry_run", "config_text": render_config(tree),
                               "input_shape": self.input_shape, "seed": self.seed})
        return EvalResult(ok=reply.get("ok", False), reason=reply.get("error") or "",
                          params=reply.get("params"), flops=reply.get("flops"),
                          metric=reply.get("metric"))

    def train(self, tree: ArchTree) -> float:
        reply = self._request({"mode": "train", "config_text": render_config(tree),
                               "dataset": self.dataset, "epochs": self.epochs,
                               "seed": self.seed, "input_shape": self.input_shape})
        if not reply.get("ok", False) or reply.get("metric") is None:
            raise EvaluatorUnavailable(f"training failed: {reply.get('error')}")
        return float(reply["metric"])
