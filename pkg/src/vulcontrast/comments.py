"""Comment generation: a deterministic offline stub, plus a three-turn
generate / review / revise client for a chat-completions endpoint."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import requests

from .data import tokenize

HARD_CONSTRAINTS = """Hard constraints:
- Output exactly ONE sentence in English.
- Describe ONLY what is explicitly shown in the code.
- Do NOT claim input validation, error handling, bounds checks, permissions, or safety guarantees unless the code clearly shows them.
- Avoid speculative words such as 'ensure/ensures/ensuring', 'handle(s) errors', 'validate(s)', 'sanitize(s)', 'filter(s)', 'guarantee(s)' unless explicitly present.
- Do NOT mention security or vulnerabilities (this is the normal setting)."""

SYSTEM_MESSAGE = "You are an expert code summarization assistant.\n\n" + HARD_CONSTRAINTS

DRAFT_TEMPLATE = """Please generate a short one-sentence comment describing the core functionality of the following function:
<code>
{code}
</code>

Output ONLY the sentence."""

REVIEW_PROMPT = """Review your previous answer and list problems.

Check specifically for:
- Any speculation beyond the code (e.g., 'ensures', 'handles errors', 'validates', 'guarantees').
- Any claims of checks that are not explicitly shown (input validation, bounds checks, error handling, permissions).
- Missing core behavior (main operations, key calls, main data flow).

Output ONLY short bullet points. Do NOT revise yet."""

REVISE_PROMPT = """Based on the problems you found, improve your answer.

Requirements:
- Output exactly ONE sentence in English.
- Describe ONLY what is explicitly shown in the code.
- Remove any speculative or non-evidenced claims.
- Do NOT mention security or vulnerabilities.

Output ONLY the final sentence."""

FORBIDDEN_WORDS = ("security", "vulnerable", "vulnerability")


class CommentError(RuntimeError):
    pass


class RemoteError(CommentError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


@dataclass
class ProviderConfig:
    mode: str = "stub"  # "stub" | "remote"
    endpoint: Optional[str] = None
    model: Optional[str] = None
    auth_env: str = "COMMENT_API_TOKEN"
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 1.0
    temperature: float = 0.0
    max_tokens: int = 128

    def __post_init__(self):
        if self.mode not in ("stub", "remote"):
            raise ValueError(f"unknown provider mode {self.mode!r}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.mode == "remote" and (not self.endpoint or not self.model):
            raise ValueError("remote mode requires endpoint and model")


@dataclass
class CritiqueTranscript:
    draft: str
    review: list
    final: str


def _first_sentence(text):
    text = " ".join(text.split())
    for i, ch in enumerate(text):
        if ch == ".":
            return text[:i + 1]
    return text + "."


def generate_comment_stub(record):
    """Deterministic template comment; never mentions security vocabulary."""
    tokens = tokenize(record.code, "code")
    name = "anonymous"
    for i, tok in enumerate(tokens):
        if tok == "(" and i > 0:
            name = tokens[i - 1]
            break
    if any(word in name.lower() for word in FORBIDDEN_WORDS):
        name = "anonymous"
    identifiers = {t for t in tokens if t.isalpha()}
    return (f"Defines function {name} operating on "
            f"{len(identifiers)} identifier tokens.")


def _post_chat(config, messages):
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(config.auth_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    body = {
        "model": config.model,
        "messages": messages,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }
    last_status = None
    for attempt in range(config.max_retries + 1):
        try:
            resp = requests.post(config.endpoint, json=body, headers=headers,
                                 timeout=config.timeout)
            last_status = resp.status_code
            if resp.status_code == 200:
                payload = resp.json()
                return payload["choices"][0]["message"]["content"]
        except requests.RequestException:
            last_status = None
        if attempt < config.max_retries:
            time.sleep(config.backoff_base * (2 ** attempt))
    raise RemoteError(
        f"chat endpoint failed after {config.max_retries + 1} attempts "
        f"(last HTTP status: {last_status})", status=last_status)


def generate_comment_llm(record, config):
    """Three-turn critique protocol: draft, self-review, one-sentence final."""
    if config.mode != "remote":
        raise CommentError("generate_comment_llm requires remote mode")
    messages = [{"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": DRAFT_TEMPLATE.format(code=record.code)}]
    draft = _post_chat(config, messages)
    messages.append({"role": "assistant", "content": draft})
    messages.append({"role": "user", "content": REVIEW_PROMPT})
    review = _post_chat(config, messages)
    messages.append({"role": "assistant", "content": review})
    messages.append({"role": "user", "content": REVISE_PROMPT})
    final = _post_chat(config, messages)
    final = _first_sentence(final)
    if not final.strip("."):
        raise CommentError("empty revision")
    bullets = [ln.lstrip("- ").strip() for ln in review.splitlines()
               if ln.strip()]
    return CritiqueTranscript(draft=draft, review=bullets, final=final)


def attach_comments(records, config):
    """Fill missing comments via the configured provider; pre-commented
    records pass through unchanged."""
    out = []
    errors = []
    generated = 0
    for rec in records:
        if rec.comment is not None:
            out.append(rec)
            continue
        try:
            if config.mode == "stub":
                comment = generate_comment_stub(rec)
            else:
                comment = generate_comment_llm(rec, config).final
            out.append(replace(rec, comment=comment))
            generated += 1
        except CommentError as exc:
            errors.append((rec.id, str(exc)))
            out.append(rec)
    if errors and generated == 0 and any(r.comment is None for r in out):
        detail = "; ".join(f"{rid}: {msg}" for rid, msg in errors[:3])
        raise CommentError(f"all comment generations failed ({detail})")
    return out, errors
