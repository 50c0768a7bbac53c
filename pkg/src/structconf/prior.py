"""Edge-probability priors over ordered variable pairs.

Priors are read from a flat JSON map ``{"u->v": p}``. Unlisted pairs are
uninformative (0.5). Stored probabilities are clipped to
``[clip_sample, 1 - clip_sample]`` for Bernoulli sampling; the structural log
prior clips again at the looser ``clip_prior`` level.
"""

from __future__ import annotations

import json
import logging
import re
import urllib.error
import urllib.request
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

logger = logging.getLogger(__name__)

SAMPLE_CLIP = 1e-4
PRIOR_CLIP = 1e-6
UNINFORMATIVE = 0.5
SYSTEM_MESSAGE = "Return ONLY valid JSON."


class PriorError(ValueError):
    pass


def clip_probability(p: float, eps: float) -> float:
    return max(eps, min(1.0 - eps, p))


@dataclass(frozen=True)
class EdgePrior:
    variables: tuple[str, ...]
    probs: Mapping[tuple[str, str], float] = field(default_factory=dict)
    clip_sample: float = SAMPLE_CLIP
    clip_prior: float = PRIOR_CLIP

    def __post_init__(self):
        known = set(self.variables)
        clipped = {}
        for (u, v), p in self.probs.items():
            if u not in known or v not in known:
                raise PriorError(f"unknown variable in pair {u}->{v}")
            if u == v:
                raise PriorError(f"self-loop {u}->{v}")
            p = float(p)
            if not 0.0 <= p <= 1.0:
                raise PriorError(f"probability {p} for {u}->{v} outside [0, 1]")
            clipped[(u, v)] = clip_probability(p, self.clip_sample)
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "probs", dict(sorted(clipped.items())))

    def prob(self, u: str, v: str) -> float:
        return self.probs.get((u, v), UNINFORMATIVE)

    def prior_prob(self, u: str, v: str) -> float:
        return clip_probability(self.prob(u, v), self.clip_prior)

    def to_json(self) -> dict[str, float]:
        return {f"{u}->{v}": p for (u, v), p in self.probs.items()}

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    def inverted(self) -> "EdgePrior":
        """Every stored probability ``p`` replaced by ``1 - p``."""
        return EdgePrior(self.variables, {k: 1.0 - p for k, p in self.probs.items()},
                         self.clip_sample, self.clip_prior)


def uniform_prior(variables: Sequence[str]) -> EdgePrior:
    return EdgePrior(tuple(variables))


def parse_pair(key: str) -> tuple[str, str]:
    parts = key.split("->")
    if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
        raise PriorError(f"malformed pair key {key!r}")
    return parts[0].strip(), parts[1].strip()


def prior_from_mapping(mapping: Mapping[str, float], variables: Sequence[str]) -> EdgePrior:
    probs = {}
    for key, p in mapping.items():
        if not isinstance(p, (int, float)) or isinstance(p, bool):
            raise PriorError(f"probability for {key!r} is not a number")
        probs[parse_pair(key)] = float(p)
    return EdgePrior(tuple(variables), probs)


def load_edge_prior(path: str | Path, variables: Sequence[str]) -> EdgePrior:
    with open(path) as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict):
        raise PriorError("prior file must hold a JSON object")
    return prior_from_mapping(mapping, variables)


def role_prior(variables: Sequence[str], true_edges: Iterable[tuple[str, str]],
               p_true: float = 0.95, p_false: float = 0.05) -> EdgePrior:
    """Prior that puts ``p_true`` on the listed edges and ``p_false`` elsewhere.

    Stands in for an elicited prior on synthetic data whose structural roles
    are known.
    """
    truth = set(true_edges)
    probs = {(u, v): (p_true if (u, v) in truth else p_false)
             for u in variables for v in variables if u != v}
    return EdgePrior(tuple(variables), probs)


# Remote chat elicitation (optional)

PROMPT_TEMPLATE = (
    "{description}\n\n"
    "For each directed edge below, give a probability in [0,1] that this causal "
    "relationship exists in the true DAG.\n\n"
    "IMPORTANT: Output ONLY a JSON object. No reasoning.\n"
    'Example: {{"A->B": 0.8, "B->C": 0.1}}\n\n'
    "Edges:\n{edges}"
)


def prompt_pairs(variables: Sequence[str], treatment: str, outcome: str) -> list[tuple[str, str]]:
    """Ordered pairs to ask about: treatment/outcome pairs first, then truncated."""
    pairs = [(u, v) for u in variables for v in variables if u != v]
    focal = {treatment, outcome}
    first = [p for p in pairs if p[0] in focal or p[1] in focal]
    rest = [p for p in pairs if not (p[0] in focal or p[1] in focal)]
    limit = 120 if len(variables) <= 15 else 60
    return (first + rest)[:limit]


def build_prompt(description: str, pairs: Sequence[tuple[str, str]]) -> str:
    edges = ", ".join(f"{u}->{v}" for u, v in pairs)
    return PROMPT_TEMPLATE.format(description=description, edges=edges)


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json_object(text: str) -> Optional[dict]:
    """Pull a JSON object out of free text.

    Fenced blocks are unwrapped first; otherwise the widest ``{...}`` span
    is tried, shrinking from the right until something parses.
    """
    candidates = [m.group(1) for m in _FENCE.finditer(text)] + [text]
    for chunk in candidates:
        start = chunk.find("{")
        if start < 0:
            continue
        ends = [i for i, ch in enumerate(chunk) if ch == "}" and i > start]
        for end in reversed(ends):
            try:
                obj = json.loads(chunk[start:end + 1])
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict):
                return obj
    return None


def _post_chat(endpoint: str, body: dict, timeout: float) -> str:
    req = urllib.request.Request(
        endpoint, data=json.dumps(body).encode(), headers={"Content-Type": "application/json"}, method="POST"
    )
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        payload = resp.read().decode()
    try:
        obj = json.loads(payload)
    except json.JSONDecodeError:
        return payload
    # OpenAI-style chat completion; anything else is treated as raw text.
    if isinstance(obj, dict) and "choices" in obj:
        return obj["choices"][0]["message"]["content"]
    return payload


def elicit_prior_http(endpoint: str, variables: Sequence[str], description: str, treatment: str,
                      outcome: str, retries: int = 5, model: str = "default", timeout: float = 30.0) -> EdgePrior:
    """Ask a chat-completion endpoint for edge probabilities.

    Never raises on transport or parse failure: after ``retries`` attempts it
    warns and returns the uninformative prior.
    """
    pairs = prompt_pairs(variables, treatment, outcome)
    body = {
        "model": model,
        "messages": [
            {"role": "system", "content": SYSTEM_MESSAGE},
            {"role": "user", "content": build_prompt(description, pairs)},
        ],
        "temperature": 0.0,
    }
    need = max(len(variables), 5)
    known = set(variables)
    for attempt in range(1, max(retries, 1) + 1):
        try:
            text = _post_chat(endpoint, body, timeout)
        except (urllib.error.URLError, OSError, KeyError, IndexError, TypeError) as exc:
            logger.info("elicitation attempt %d failed: %s", attempt, exc)
            continue
        obj = extract_json_object(text)
        if obj is None:
            continue
        probs = {}
        for key, p in obj.items():
            try:
                u, v = parse_pair(str(key))
            except PriorError:
                continue
            if u in known and v in known and u != v and isinstance(p, (int, float)) and 0 <= p <= 1:
                probs[(u, v)] = float(p)
        if len(probs) >= need:
            return EdgePrior(tuple(variables), probs)
        logger.info("elicitation attempt %d covered %d pairs, need %d", attempt, len(probs), need)
    warnings.warn("prior elicitation failed; falling back to the uninformative 0.5 prior")
    return uniform_prior(variables)
