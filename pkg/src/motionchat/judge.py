"""LLM-judge scoring of motion-reasoning transcripts.

The transcript substitutes each motion with its reference captions as
``[c1, c2, c3]``; the judge prompt asks for a JSON object scoring logical
coherence, content alignment, and naturalness on a 10-point scale.
Responses are cached to disk by content hash so reruns are free.
"""

from dataclasses import dataclass
import hashlib
import json
import os

from .clients import call_with_retries
from .conversation import ConversationSample
from .errors import JudgeError, ValidationError
from .synthesis import render_prompt

_SCORE_KEYS = {
    "Logical Coherence": "coherence",
    "Content Alignment": "alignment",
    "Naturalness": "naturalness",
}


@dataclass
class JudgeResult:
    scores: dict
    justifications: dict
    clamped: bool = False
    raw: str = ""


def render_judge_transcript(conv: ConversationSample, reference_captions: dict) -> str:
    """INPUT: all turns but the last; OUTPUT: the final assistant turn.
    Motion segments become their reference captions as ``[c1, c2, c3]``."""
    if conv.turns[-1].role != "assistant":
        raise ValidationError("judged conversation must end with an assistant turn")

    def render_turn(turn):
        parts = []
        for seg in turn.segments:
            if seg.kind == "text":
                parts.append(seg.text)
            else:
                caps = reference_captions.get(seg.clip_id)
                if not caps:
                    raise ValidationError(f"no reference captions for {seg.clip_id!r}")
                parts.append("[" + ", ".join(caps[:3]) + "]")
        return ("USER: " if turn.role == "user" else "ASSISTANT: ") + "".join(parts)

    context = " ".join(render_turn(t) for t in conv.turns[:-1])
    answer = render_turn(conv.turns[-1])
    return f"INPUT: {context}\nOUTPUT: {answer}"


def render_judge_prompt(transcript: str) -> str:
    return render_prompt("judge", transcript=transcript)


def _extract_json(text: str) -> dict:
    start = text.find("{")
    if start < 0:
        raise ValueError("no JSON object in response")
    depth = 0
    for i in range(start, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return json.loads(text[start : i + 1])
    raise ValueError("unbalanced JSON object in response")


def judge_motion_reasoning(
    conv: ConversationSample,
    llm_client,
    reference_captions: dict,
    cache_dir=None,
    retry_budget: int = 2,
) -> JudgeResult:
    """Score one conversation; one re-ask on unparseable output, then error.

    Scores are clamped to [0, 10]; clamping is flagged in the result.
    """
    transcript = render_judge_transcript(conv, reference_captions)
    prompt = render_judge_prompt(transcript)

    def ask(suffix=""):
        request = {"template_id": "judge", "slot_values": {"prompt": prompt + suffix}}
        text = call_with_retries(llm_client, request, retry_budget)
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)
            key = hashlib.sha256((prompt + suffix).encode("utf-8")).hexdigest()
            with open(os.path.join(cache_dir, f"{key}.json"), "w", encoding="utf-8") as f:
                json.dump({"prompt_hash": key, "response": text}, f)
        return text

    raw = ask()
    try:
        doc = _extract_json(raw)
        scores_doc = doc["scores"]
    except (ValueError, KeyError, TypeError):
        raw = ask("\nReturn only JSON.")
        try:
            doc = _extract_json(raw)
            scores_doc = doc["scores"]
        except (ValueError, KeyError, TypeError) as exc:
            raise JudgeError(f"judge returned unusable output: {exc}") from exc

    scores = {}
    justifications = {}
    clamped = False
    for heading, name in _SCORE_KEYS.items():
        try:
            entry = scores_doc[heading]
            value = float(entry["Score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise JudgeError(f"judge output missing {heading!r} score") from exc
        bounded = min(max(value, 0.0), 10.0)
        clamped = clamped or bounded != value
        scores[name] = bounded
        justifications[name] = str(entry.get("Justification", ""))
    return JudgeResult(scores=scores, justifications=justifications, clamped=clamped, raw=raw)
