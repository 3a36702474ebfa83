"""Task templates and rendering of samples into token sequences.

Stage-2 samples are single task instances rendered from one clip + caption
with a fixed template per task; the loss covers only the label segments.
Stage-3 samples serialize whole conversations with "USER:"/"ASSISTANT:"
sentinels; the loss covers exactly the assistant turns' content (motion
spans included) plus the end-of-turn token, never the sentinels.
"""

from dataclasses import dataclass
import re

import numpy as np

from .codec import BOS, EOS, splice_text_and_motion
from .conversation import ClipRegistry, ConversationSample, Segment, Turn
from .errors import ValidationError
from .motion import InteractiveClip
from .rqvae import encode_to_grid
from .training import TokenizedSample

STAGE2_TASKS = ("m2t", "t2m", "reaction", "prediction")

STAGE2_PATTERNS = {
    "m2t": r"^Generate caption from motion: <motion> .+$",
    "t2m": r"^Generate motion from caption: .+<motion>$",
    "reaction": r"^Generate reaction motion: <motion><motion>$",
    "prediction": r"^Predict motion: <motion><motion>$",
}

# A few phrasings per task for single-turn instruction conversations.
INSTRUCTION_VARIANTS = {
    "t2m": (
        "Demonstrate a sequence of movements that symbolizes {caption}",
        "Please create a motion that represents {caption}",
        "Show me a gesture that conveys {caption}",
        "Produce a motion that matches {caption}",
    ),
    "m2t": (
        "Describe the motion represented by this clip.",
        "Provide a summary of the action depicted in this motion.",
        "Explain the motion shown here.",
    ),
    "prediction": (
        "Predict how this motion continues.",
        "Do the motion prediction task for this clip.",
    ),
}


@dataclass
class Stage2Sample:
    """Ordered segments with ``label_from`` marking where the label starts."""

    task: str
    segments: list
    label_from: int


def render_stage2_sample(task, clip_id, caption, registry: ClipRegistry) -> Stage2Sample:
    """Template rendering for one pretraining task instance.

    Derived clips (reaction per-person tracks, prediction prefix/suffix)
    are registered under ``<clip_id>#<part>``.
    """
    if task not in STAGE2_TASKS:
        raise ValidationError(f"unknown stage-2 task {task!r}")
    clip = registry.get(clip_id)
    if task == "m2t":
        segments = [
            Segment.of_text("Generate caption from motion: "),
            Segment.of_motion(clip_id),
            Segment.of_text(" " + caption),
        ]
        return Stage2Sample(task, segments, label_from=2)
    if task == "t2m":
        segments = [
            Segment.of_text(f"Generate motion from caption: {caption}"),
            Segment.of_motion(clip_id),
        ]
        return Stage2Sample(task, segments, label_from=1)
    if task == "reaction":
        if not isinstance(clip, InteractiveClip):
            raise ValidationError("reaction rendering needs a two-person clip")
        a_id, b_id = f"{clip_id}#a", f"{clip_id}#b"
        if a_id not in registry:
            registry.add(a_id, clip.person_a)
            registry.add(b_id, clip.person_b)
        segments = [
            Segment.of_text("Generate reaction motion: "),
            Segment.of_motion(a_id),
            Segment.of_motion(b_id),
        ]
        return Stage2Sample(task, segments, label_from=2)
    # prediction: first quarter of the frames prompts the rest
    frames = clip.num_frames
    if frames < 4:
        raise ValidationError(f"prediction needs at least 4 frames, got {frames}")
    cut = frames // 4
    head_id, tail_id = f"{clip_id}#head", f"{clip_id}#tail"
    if head_id not in registry:
        registry.add(head_id, clip.slice_frames(0, cut))
        registry.add(tail_id, clip.slice_frames(cut, frames))
    segments = [
        Segment.of_text("Predict motion: "),
        Segment.of_motion(head_id),
        Segment.of_motion(tail_id),
    ]
    return Stage2Sample(task, segments, label_from=2)


def _segment_parts(segments, registry, rq_params):
    parts = []
    for seg in segments:
        if seg.kind == "text":
            parts.append(seg.text)
        else:
            parts.append(encode_to_grid(registry.get(seg.clip_id), rq_params))
    return parts


def tokenize_stage2(sample: Stage2Sample, registry, rq_params, manifest, text_tokenizer) -> TokenizedSample:
    """BOS + rendered segments + EOS; mask covers the label segments + EOS."""
    prompt = splice_text_and_motion(
        _segment_parts(sample.segments[: sample.label_from], registry, rq_params),
        manifest,
        text_tokenizer,
    )
    label = splice_text_and_motion(
        _segment_parts(sample.segments[sample.label_from :], registry, rq_params),
        manifest,
        text_tokenizer,
    )
    ids = [BOS] + prompt.ids + label.ids + [EOS]
    mask = [False] * (1 + len(prompt.ids)) + [True] * (len(label.ids) + 1)
    return TokenizedSample(ids, mask)


def render_stage2_text(sample: Stage2Sample, registry) -> str:
    """Detokenized view with motion spans shown as ``<motion>`` (for the
    template-fidelity checks)."""
    out = []
    for seg in sample.segments:
        out.append(seg.text if seg.kind == "text" else "<motion>")
    return "".join(out)


def stage2_pattern(task: str) -> re.Pattern:
    return re.compile(STAGE2_PATTERNS[task])


USER_PREFIX = "USER: "
ASSISTANT_PREFIX = "ASSISTANT: "


def render_stage3_sample(
    conv: ConversationSample, registry, rq_params, manifest, text_tokenizer
) -> TokenizedSample:
    """Serialize a conversation; loss mask is true exactly on assistant
    content tokens and the assistant end-of-turn token."""
    registry.validate_conversation(conv)
    ids = [BOS]
    mask = [False]
    for i, turn in enumerate(conv.turns):
        prefix = ("" if i == 0 else " ") + (USER_PREFIX if turn.role == "user" else ASSISTANT_PREFIX)
        prefix_ids = text_tokenizer.encode(prefix)
        content = splice_text_and_motion(
            _segment_parts(turn.segments, registry, rq_params), manifest, text_tokenizer
        )
        ids += prefix_ids + content.ids
        mask += [False] * len(prefix_ids) + [turn.role == "assistant"] * len(content.ids)
        if turn.role == "assistant":
            ids.append(EOS)
            mask.append(True)
    return TokenizedSample(ids, mask)


def render_turns(turns, registry, rq_params, manifest, text_tokenizer) -> list[int]:
    """BOS plus serialized turns (assistant turns end with EOS)."""
    ids = [BOS]
    for i, turn in enumerate(turns):
        prefix = ("" if i == 0 else " ") + (USER_PREFIX if turn.role == "user" else ASSISTANT_PREFIX)
        ids += text_tokenizer.encode(prefix)
        content = splice_text_and_motion(
            _segment_parts(turn.segments, registry, rq_params), manifest, text_tokenizer
        )
        ids += content.ids
        if turn.role == "assistant":
            ids.append(EOS)
    return ids


def render_stage3_prompt(turns, registry, rq_params, manifest, text_tokenizer) -> list[int]:
    """Token prefix for generation: serialized turns plus a trailing
    "ASSISTANT: " sentinel awaiting the model's content."""
    ids = render_turns(turns, registry, rq_params, manifest, text_tokenizer)
    sep = " " if turns else ""
    return ids + text_tokenizer.encode(sep + ASSISTANT_PREFIX)


def make_single_turn_conversation(
    conv_id: str, task: str, clip_id: str, caption: str, rng: np.random.Generator
) -> ConversationSample:
    """One user instruction + one assistant answer, using a template variant."""
    if task == "t2m":
        user = [Segment.of_text(rng.choice(INSTRUCTION_VARIANTS["t2m"]).format(caption=caption))]
        assistant = [Segment.of_motion(clip_id)]
    elif task == "m2t":
        user = [Segment.of_text(rng.choice(INSTRUCTION_VARIANTS["m2t"]) + " "), Segment.of_motion(clip_id)]
        assistant = [Segment.of_text(caption)]
    else:
        raise ValidationError(f"single-turn conversations support t2m/m2t, got {task!r}")
    return ConversationSample(
        id=conv_id,
        turns=[Turn("user", user), Turn("assistant", assistant)],
        task_tag=task,
        motion_captions={clip_id: caption},
    )
