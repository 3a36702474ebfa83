"""Conversation samples, clip registry, and corpus JSONL I/O.

A conversation is ordered user/assistant turns whose segments are either
text or references to motion clips held in a registry (clips stay out of
the corpus file so corpora are diff-able). Corpus lines follow the schema

    {"id", "task", "split", "turns": [{"role", "segments": [
        {"kind": "text", "text": ...} | {"kind": "motion", "clip": ...}]}]}
"""

from dataclasses import dataclass, field
import json
import os

from .errors import ValidationError
from .motion import InteractiveClip, MotionClip, load_motion_json, save_motion_json

TASK_TAGS = ("editing", "reasoning", "story", "t2m", "m2t", "prediction", "reaction")
SPLITS = ("train", "val", "test")


@dataclass
class Segment:
    kind: str
    text: str | None = None
    clip_id: str | None = None

    def __post_init__(self):
        if self.kind not in ("text", "motion"):
            raise ValidationError(f"segment kind must be text|motion, got {self.kind!r}")
        if self.kind == "text" and (self.text is None or self.clip_id is not None):
            raise ValidationError("text segment must carry exactly a text payload")
        if self.kind == "motion" and (self.clip_id is None or self.text is not None):
            raise ValidationError("motion segment must carry exactly a clip reference")

    @classmethod
    def of_text(cls, text: str) -> "Segment":
        return cls("text", text=text)

    @classmethod
    def of_motion(cls, clip_id: str) -> "Segment":
        return cls("motion", clip_id=clip_id)


@dataclass
class Turn:
    role: str
    segments: list

    def __post_init__(self):
        if self.role not in ("user", "assistant"):
            raise ValidationError(f"role must be user|assistant, got {self.role!r}")
        if not self.segments:
            raise ValidationError("turn has no segments")


@dataclass
class ConversationSample:
    id: str
    turns: list
    task_tag: str
    split: str = "train"
    # caption for each synthesized/selected motion, kept for quality gating;
    # not part of the corpus schema.
    motion_captions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task_tag not in TASK_TAGS:
            raise ValidationError(f"unknown task tag {self.task_tag!r}")
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}")
        if not any(t.role == "assistant" for t in self.turns):
            raise ValidationError("conversation needs at least one assistant turn")
        for i, turn in enumerate(self.turns):
            expected = "user" if i % 2 == 0 else "assistant"
            if turn.role != expected:
                raise ValidationError(
                    f"turn {i} must be {expected} (roles alternate starting with user)"
                )

    def motion_clip_ids(self) -> list[str]:
        return [s.clip_id for t in self.turns for s in t.segments if s.kind == "motion"]

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "task": self.task_tag,
            "split": self.split,
            "turns": [
                {
                    "role": t.role,
                    "segments": [
                        {"kind": "text", "text": s.text}
                        if s.kind == "text"
                        else {"kind": "motion", "clip": s.clip_id}
                        for s in t.segments
                    ],
                }
                for t in self.turns
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ConversationSample":
        turns = [
            Turn(
                role=t["role"],
                segments=[
                    Segment.of_text(s["text"]) if s["kind"] == "text" else Segment.of_motion(s["clip"])
                    for s in t["segments"]
                ],
            )
            for t in doc["turns"]
        ]
        return cls(id=doc["id"], turns=turns, task_tag=doc["task"], split=doc["split"])


def save_corpus_jsonl(path, samples) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(json.dumps(sample.to_json_dict(), sort_keys=True) + "\n")


def load_corpus_jsonl(path) -> list:
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                samples.append(ConversationSample.from_json_dict(json.loads(line)))
    return samples


class ClipRegistry:
    """Named motion clips; conversations reference them by id."""

    def __init__(self):
        self._clips: dict = {}

    def add(self, clip_id: str, clip) -> str:
        if not isinstance(clip, (MotionClip, InteractiveClip)):
            raise ValidationError("registry holds MotionClip or InteractiveClip only")
        if clip_id in self._clips:
            raise ValidationError(f"duplicate clip id {clip_id!r}")
        self._clips[clip_id] = clip
        return clip_id

    def get(self, clip_id: str):
        try:
            return self._clips[clip_id]
        except KeyError:
            raise ValidationError(f"unresolved motion reference {clip_id!r}") from None

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self._clips

    def __len__(self) -> int:
        return len(self._clips)

    def ids(self) -> list[str]:
        return sorted(self._clips)

    def validate_conversation(self, conv: ConversationSample) -> None:
        for clip_id in conv.motion_clip_ids():
            self.get(clip_id)

    def save_dir(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        for clip_id, clip in sorted(self._clips.items()):
            save_motion_json(os.path.join(directory, f"{clip_id}.motion.json"), clip)

    @classmethod
    def load_dir(cls, directory) -> "ClipRegistry":
        reg = cls()
        for name in sorted(os.listdir(directory)):
            if name.endswith(".motion.json"):
                reg.add(name[: -len(".motion.json")], load_motion_json(os.path.join(directory, name)))
        return reg
