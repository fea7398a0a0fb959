"""Random-swap / random-delete view construction at strength alpha."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .data import TokenSequence


@dataclass
class AugConfig:
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass
class ViewPair:
    original: TokenSequence
    augmented: TokenSequence


def _substream(seed, example_id, view, epoch=0):
    digest = hashlib.sha256(
        f"{seed}:{example_id}:{view}:{epoch}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def random_swap(tokens, alpha, rng):
    if not tokens:
        raise ValueError("random_swap: tokens must be non-empty")
    if alpha == 0.0:
        return list(tokens)
    out = list(tokens)
    n_swaps = max(1, int(np.floor(alpha * len(out))))
    for _ in range(n_swaps):
        if len(out) < 2:
            break
        i, j = rng.choice(len(out), size=2, replace=False)
        out[i], out[j] = out[j], out[i]
    return out


def random_delete(tokens, alpha, rng):
    if not tokens:
        raise ValueError("random_delete: tokens must be non-empty")
    if alpha == 0.0:
        return list(tokens)
    keep = rng.random(len(tokens)) >= alpha
    out = [t for t, k in zip(tokens, keep) if k]
    if not out:
        out = [tokens[rng.integers(0, len(tokens))]]
    return out


def augment_tokens(tokens, alpha, rng):
    """Swap then delete, the combined perturbation applied to each view."""
    return random_delete(random_swap(tokens, alpha, rng), alpha, rng)


def make_augmented_views(example_id, code_tokens, text_tokens, config,
                         epoch=0):
    """Build (code, text) view pairs; each view has its own seeded substream
    so either can be regenerated alone."""
    if not code_tokens or not text_tokens:
        raise ValueError("make_augmented_views: token lists must be non-empty")
    code_aug = augment_tokens(
        code_tokens, config.alpha,
        _substream(config.seed, example_id, "code", epoch))
    text_aug = augment_tokens(
        text_tokens, config.alpha,
        _substream(config.seed, example_id, "text", epoch))
    code_pair = ViewPair(TokenSequence(list(code_tokens), "code"),
                         TokenSequence(code_aug, "code"))
    text_pair = ViewPair(TokenSequence(list(text_tokens), "text"),
                         TokenSequence(text_aug, "text"))
    return code_pair, text_pair
