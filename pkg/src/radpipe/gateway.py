"""Prompt assembly and impression generation against HTTP completion backends.

A backend is anything that answers ``POST endpoint`` with JSON
``{"text": ...}`` given ``{"prompt", "max_new_tokens", "temperature",
"seed"}``. The transport and the inter-attempt sleep are injectable so
retry behavior is testable without a network or a clock.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import requests

from radpipe.dataset import InstructionTemplate
from radpipe.errors import (
    BackendUnavailable,
    ConfigError,
    DataError,
    EmptyGeneration,
    TransportError,
)
from radpipe.preprocess import ReportPair

logger = logging.getLogger(__name__)

DEFAULT_PROMPT_STYLE = "default"

Transport = Callable[[str, dict, int], dict]


def assemble_prompt(instruction: str, findings: str, style: str = DEFAULT_PROMPT_STYLE) -> str:
    """Build the completion prompt for one findings text.

    The default style lays out five blocks separated by blank lines: an
    instruction header, the instruction, an input header, the findings, and
    a response header. Instruction and findings appear verbatim.
    """
    if style != DEFAULT_PROMPT_STYLE:
        raise ConfigError(f"unknown prompt style {style!r}")
    if not instruction or not findings:
        raise DataError("instruction and findings must both be non-empty")
    return (
        "### Instruction:\n\n"
        f"{instruction}\n\n"
        "### Input:\n\n"
        f"{findings}\n\n"
        "### Response:\n"
    )


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class DecodingParams:
    max_new_tokens: int = 256
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")
        if self.temperature < 0.0:
            raise ConfigError("temperature must be >= 0")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_initial_ms: int = 250

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        if self.backoff_initial_ms < 0:
            raise ConfigError("backoff_initial_ms must be >= 0")


@dataclass(frozen=True)
class GenerationConfig:
    model_label: str
    endpoint: str
    decoding: DecodingParams = field(default_factory=DecodingParams)
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout_ms: int = 30_000

    def __post_init__(self):
        if not self.model_label:
            raise ConfigError("model_label must be non-empty")
        if not self.endpoint:
            raise ConfigError("endpoint must be non-empty")
        if self.timeout_ms < 1:
            raise ConfigError("timeout_ms must be >= 1")


@dataclass(frozen=True)
class GeneratedImpression:
    report_id: str
    model_label: str
    text: str
    latency_ms: int
    created_at: str
    prompt_hash: str

    @property
    def is_empty(self) -> bool:
        return self.text == ""


def http_post_json(url: str, payload: dict, timeout_ms: int) -> dict:
    """Default transport: one POST, JSON in and out.

    Anything short of a 200 with a JSON body is a :class:`TransportError`,
    which the retry loop treats as retryable.
    """
    try:
        response = requests.post(url, json=payload, timeout=timeout_ms / 1000.0)
    except requests.RequestException as exc:
        raise TransportError(f"request to {url} failed: {exc}") from exc
    if response.status_code != 200:
        raise TransportError(f"HTTP {response.status_code} from {url}")
    try:
        body = response.json()
    except ValueError as exc:
        raise TransportError(f"non-JSON response from {url}") from exc
    return body


def _extract_text(body: object, endpoint: str) -> str:
    if not isinstance(body, dict) or not isinstance(body.get("text"), str):
        raise TransportError(f"response from {endpoint} lacks a string 'text' field")
    return body["text"]


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def generate_impression(
    findings: str,
    config: GenerationConfig,
    template: InstructionTemplate | None = None,
    *,
    report_id: str = "",
    style: str = DEFAULT_PROMPT_STYLE,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
    allow_empty: bool = False,
) -> GeneratedImpression:
    """Generate one impression, retrying transport failures with backoff.

    Exactly ``config.retry.max_attempts`` calls are made before giving up
    with :class:`BackendUnavailable`. Backoff doubles per failure, starting
    at ``backoff_initial_ms``, with no sleep after the final failure. Empty
    backend text raises :class:`EmptyGeneration` unless ``allow_empty``,
    in which case the empty result is returned for the caller to record.
    """
    template = InstructionTemplate() if template is None else template
    transport = http_post_json if transport is None else transport
    prompt = assemble_prompt(template.instruction_text, findings, style)
    payload = {
        "prompt": prompt,
        "max_new_tokens": config.decoding.max_new_tokens,
        "temperature": config.decoding.temperature,
        "seed": config.decoding.seed,
    }
    last_error: Exception | None = None
    for attempt in range(1, config.retry.max_attempts + 1):
        started = time.monotonic()
        try:
            body = transport(config.endpoint, payload, config.timeout_ms)
            text = _extract_text(body, config.endpoint)
        except TransportError as exc:
            last_error = exc
            logger.warning(
                "%s: attempt %d/%d failed: %s",
                config.model_label,
                attempt,
                config.retry.max_attempts,
                exc,
            )
            if attempt < config.retry.max_attempts:
                sleep(config.retry.backoff_initial_ms * 2 ** (attempt - 1) / 1000.0)
            continue
        latency_ms = int((time.monotonic() - started) * 1000)
        text = text.strip()
        if not text and not allow_empty:
            raise EmptyGeneration(
                f"backend {config.model_label} returned empty text for {report_id!r}"
            )
        return GeneratedImpression(
            report_id=report_id,
            model_label=config.model_label,
            text=text,
            latency_ms=latency_ms,
            created_at=_now_iso(),
            prompt_hash=prompt_digest(prompt),
        )
    raise BackendUnavailable(
        f"backend {config.model_label} at {config.endpoint} failed "
        f"{config.retry.max_attempts} attempts: {last_error}",
        last_error=last_error,
    )


class ResultsLedger:
    """Append-only JSONL store of generations, keyed by (report_id, model_label).

    Appends are flushed and fsynced before returning, and reads keep the
    first row seen for a key, so a finished cell is never regenerated even
    if a crash left a duplicate behind.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self) -> dict[tuple[str, str], GeneratedImpression]:
        results: dict[tuple[str, str], GeneratedImpression] = {}
        if not self.path.exists():
            return results
        with open(self.path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    result = GeneratedImpression(
                        report_id=row["report_id"],
                        model_label=row["model_label"],
                        text=row["text"],
                        latency_ms=row["latency_ms"],
                        created_at=row["created_at"],
                        prompt_hash=row["prompt_hash"],
                    )
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{self.path}:{lineno}: malformed ledger row: {exc}") from exc
                results.setdefault((result.report_id, result.model_label), result)
        return results

    def append(self, result: GeneratedImpression) -> None:
        row = {
            "report_id": result.report_id,
            "model_label": result.model_label,
            "text": result.text,
            "latency_ms": result.latency_ms,
            "created_at": result.created_at,
            "prompt_hash": result.prompt_hash,
        }
        line = json.dumps(row, ensure_ascii=False) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line)
                handle.flush()
                os.fsync(handle.fileno())


def batch_generate(
    pairs: Sequence[ReportPair],
    configs: Sequence[GenerationConfig],
    template: InstructionTemplate | None = None,
    *,
    ledger: ResultsLedger | str | Path,
    style: str = DEFAULT_PROMPT_STYLE,
    max_workers: int = 1,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[GeneratedImpression]:
    """Fill the (pair, config) grid, recording each result in the ledger.

    Cells already present in the ledger are not re-called, which is what
    makes an interrupted batch resumable. Empty generations are recorded
    with empty text and counted by the caller via ``is_empty``; a backend
    that exhausts its retries aborts the batch.
    """
    labels = [config.model_label for config in configs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate model_label among generation configs: {labels}")
    if isinstance(ledger, (str, Path)):
        ledger = ResultsLedger(ledger)
    done = ledger.load()
    todo = [
        (pair, config)
        for pair in pairs
        for config in configs
        if (pair.report_id, config.model_label) not in done
    ]

    def run_cell(cell: tuple[ReportPair, GenerationConfig]) -> GeneratedImpression:
        pair, config = cell
        result = generate_impression(
            pair.findings,
            config,
            template,
            report_id=pair.report_id,
            style=style,
            transport=transport,
            sleep=sleep,
            allow_empty=True,
        )
        if result.is_empty:
            logger.warning("%s: empty generation for %s", config.model_label, pair.report_id)
        ledger.append(result)
        return result

    fresh: list[GeneratedImpression] = []
    if max_workers <= 1:
        for cell in todo:
            fresh.append(run_cell(cell))
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            fresh.extend(pool.map(run_cell, todo))

    by_cell = dict(done)
    for result in fresh:
        by_cell[(result.report_id, result.model_label)] = result
    grid = [
        by_cell[(pair.report_id, config.model_label)]
        for pair in pairs
        for config in configs
    ]
    grid.sort(key=lambda r: (r.report_id, r.model_label))
    return grid
