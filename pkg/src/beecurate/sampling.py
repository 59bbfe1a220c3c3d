"""Token-sampling primitives: temperature, top-k, top-p, and a decode loop.

The composition order is temperature -> top-k -> softmax -> top-p ->
categorical draw.  All tie-breaking is by lowest index, and randomness
flows through an explicit counter-based state, so every draw is
replayable and independent draws can run concurrently.

The default config (temperature 0.1, top-k 1, top-p 0.001, 512 max new
tokens) matches a production document-understanding serving setup; with
top-k 1 the pipeline is a deterministic argmax regardless of seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class TokenRng:
    """Counter-based random state: hashing (key, counter) yields each draw.

    Immutable; every draw returns the advanced state instead of mutating.
    ``split`` derives an independent stream for a concurrent consumer.
    """

    seed: int
    counter: int = 0

    def uniform(self) -> tuple[float, "TokenRng"]:
        """One double in [0, 1) and the advanced state."""
        key = _splitmix64(self.seed & _MASK64)
        bits = _splitmix64((key + self.counter) & _MASK64)
        u = (bits >> 11) * 2.0**-53
        return u, TokenRng(seed=self.seed, counter=self.counter + 1)

    def split(self, stream: int) -> "TokenRng":
        return TokenRng(seed=_splitmix64((self.seed ^ _splitmix64(stream)) & _MASK64))


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 0.1
    top_k: int = 1
    top_p: float = 0.001
    max_new_tokens: int = 512
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.temperature > 0):
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if not (0 < self.top_p <= 1):
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")


def apply_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Divide logits by the temperature; the argmax never changes."""
    if not (temperature > 0):
        raise ValueError(f"temperature must be > 0, got {temperature}")
    return np.asarray(logits, dtype=np.float64) / temperature


def top_k_filter(logits: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest logits, everything else becomes -inf.

    Ties at the k-th value are broken toward the lowest index, so exactly
    k entries survive and the result is deterministic.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not 1 <= k <= logits.size:
        raise ValueError(f"top_k must be in [1, {logits.size}], got {k}")
    order = np.argsort(-logits, kind="stable")
    out = np.full_like(logits, -np.inf)
    out[order[:k]] = logits[order[:k]]
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits)
    exp = np.exp(shifted)
    return exp / np.sum(exp)


def top_p_filter(probabilities: np.ndarray, p: float) -> np.ndarray:
    """Renormalize onto the smallest descending-sorted prefix with mass >= p.

    The nucleus always contains at least the most probable token; ties
    are broken toward the lowest index.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    if not (0 < p <= 1):
        raise ValueError(f"top_p must be in (0, 1], got {p}")
    if np.any(probs < 0) or abs(float(np.sum(probs)) - 1.0) > 1e-9:
        raise ValueError("probabilities must be non-negative and sum to 1")
    order = np.argsort(-probs, kind="stable")
    cumulative = np.cumsum(probs[order])
    keep = int(np.searchsorted(cumulative, p, side="left")) + 1
    keep = min(max(keep, 1), probs.size)
    nucleus = order[:keep]
    out = np.zeros_like(probs)
    out[nucleus] = probs[nucleus]
    return out / np.sum(out)


def sample_token(
    logits: np.ndarray, config: SamplingConfig, rng: TokenRng
) -> tuple[int, TokenRng]:
    """Draw one token: temperature -> top-k -> softmax -> top-p -> sample.

    With ``top_k == 1`` the draw is the argmax for every seed.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    scaled = apply_temperature(logits, config.temperature)
    filtered = top_k_filter(scaled, config.top_k)
    probs = softmax(filtered)
    nucleus = top_p_filter(probs, config.top_p)
    u, rng = rng.uniform()
    cumulative = np.cumsum(nucleus)
    token = int(np.searchsorted(cumulative, u, side="right"))
    if token >= nucleus.size or nucleus[token] == 0.0:
        # u landed past the last accumulated mass (rounding); take the
        # last token inside the nucleus.
        token = int(np.flatnonzero(nucleus)[-1])
    return token, rng


def decode_loop(
    lm_head: Callable[[tuple[int, ...]], Sequence[float]],
    config: SamplingConfig,
    eos_token_id: int,
) -> list[int]:
    """Autoregressive decode: sample until EOS or ``max_new_tokens``.

    ``lm_head`` maps the generated prefix to the next-token logits and
    must be deterministic; the emitted sequence includes the EOS token.
    """
    rng = TokenRng(seed=config.seed)
    tokens: list[int] = []
    for _ in range(config.max_new_tokens):
        logits = np.asarray(lm_head(tuple(tokens)), dtype=np.float64)
        token, rng = sample_token(logits, config, rng)
        tokens.append(token)
        if token == eos_token_id:
            break
    return tokens
