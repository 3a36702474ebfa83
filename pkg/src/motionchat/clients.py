"""External client contract plus the deterministic in-repo stubs.

Requests are ``{"template_id": str, "slot_values": {...}}`` and responses
are raw text; the synthesis pipeline owns prompt rendering and response
parsing. The stubs make the whole pipeline runnable offline: the LLM stub
emits scripted conversations in the bracket convention, and the
text-to-motion stub returns the canonical motion implied by a caption.
"""

from dataclasses import dataclass
import hashlib
import json

import numpy as np

from .errors import ClientError
from .motion import SkeletonSpec
from .synthetic import canonical_motion, caption_seed


@dataclass
class ClientSpec:
    endpoint: str = "stub"
    timeout: float = 30.0
    retry_budget: int = 2
    prompt_template: str = ""

    def __post_init__(self):
        if self.retry_budget < 0:
            raise ClientError("retry budget must be >= 0")


def request_hash(request: dict) -> str:
    return hashlib.sha256(json.dumps(request, sort_keys=True).encode("utf-8")).hexdigest()


def response_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def call_with_retries(client, request: dict, retry_budget: int):
    """Invoke ``client.complete`` retrying client exceptions up to the budget."""
    last = None
    for _ in range(retry_budget + 1):
        try:
            return client.complete(request)
        except Exception as exc:  # client errors are opaque; retry them all
            last = exc
    raise ClientError(f"client failed after {retry_budget + 1} attempts: {last}")


_VERBS = ("circle", "approach", "mirror", "push against", "step around", "lean toward")
_MOODS = ("calmly", "playfully", "cautiously", "energetically", "hesitantly", "boldly")
_EDITS = ("more hesitant", "more confident", "more playful", "calmer", "more aggressive")


def _pick(seq, key: str):
    return seq[caption_seed(key) % len(seq)]


def derived_caption(key: str) -> str:
    """Deterministic two-person caption from an arbitrary string key."""
    return (
        f"Two people {_pick(_VERBS, key + ':v')} each other "
        f"{_pick(_MOODS, key + ':m')} in an open space"
    )


class StubLLMClient:
    """Deterministic scripted responses keyed by template id and slots."""

    def __init__(self, fail_first: int = 0):
        self.calls = 0
        self._fail_first = fail_first  # test hook: raise on the first N calls

    def complete(self, request: dict) -> str:
        self.calls += 1
        if self.calls <= self._fail_first:
            raise ClientError("stub transient failure")
        template = request["template_id"]
        slots = request.get("slot_values", {})
        key = request_hash(request)
        if template == "edit_caption":
            return f"Motion 2: [{slots['caption']}, then one person becomes {_pick(_EDITS, key)}]"
        if template == "edit_pair":
            return (
                f"User: Let's create a story starting from [motion_placeholder_1].\n"
                f"AI: {slots['caption1']}\n"
                f"User: Okay, now make one person {_pick(_EDITS, key)}. How would the motion change?\n"
                f"AI: [motion_placeholder_2]"
            )
        if template == "reason_seeded":
            return (
                f"User: The current scene is [motion_placeholder_1]. What do you think happens next?\n"
                f"AI: They keep interacting; the tension builds between the two of them.\n"
                f"User: Show me what will happen after that in motion format.\n"
                f"AI: [{derived_caption(key)}]"
            )
        if template == "fresh_pair":
            cap1 = derived_caption(key + ":1")
            cap2 = derived_caption(key + ":2")
            return (
                f"User: Let's build a scene about {slots.get('topic', 'two people meeting')}.\n"
                f"AI: [{cap1}]\n"
                f"User: What happens next? Visualize it.\n"
                f"AI: [{cap2}]"
            )
        if template == "judge":
            return json.dumps(
                {
                    "scores": {
                        "Logical Coherence": {"Justification": "consistent story", "Score": 7},
                        "Content Alignment": {"Justification": "matches the motions", "Score": 8},
                        "Naturalness": {"Justification": "reads fluently", "Score": 8},
                    }
                }
            )
        raise ClientError(f"stub has no script for template {template!r}")


class StubTextToMotionClient:
    """Caption -> canonical motion, plus a small seeded perturbation."""

    def __init__(self, skeleton: SkeletonSpec | None = None, noise: float = 0.02):
        self.skeleton = skeleton or SkeletonSpec()
        self.noise = noise

    def synthesize(self, caption: str):
        clip = canonical_motion(caption, self.skeleton)
        if not self.noise:
            return clip
        rng = np.random.default_rng(caption_seed(caption + ":noise"))
        for person in clip.persons:
            jitter = self.noise * rng.standard_normal(person.features[:, : 3 * self.skeleton.num_joints].shape)
            person.features[:, : 3 * self.skeleton.num_joints] += jitter
        return clip
