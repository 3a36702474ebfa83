"""Multi-turn conversation synthesis with quality gating.

Two creation modes: ``dataset_plus_synth`` keeps the seed's source clip and
synthesizes one companion motion; ``both_synth`` synthesizes both. An LLM
client scripts the conversation (captions appear in brackets, seed motions
as ``[motion_placeholder_1/2]``), a text-to-motion client renders captions
into clips, and a retrieval-based gate filters the results. Jobs are
independent and resumable: completed job ids live in a checkpoint file and
every client call is logged by request/response hash.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import json
import os
import re

import numpy as np

from .clients import call_with_retries, request_hash, response_hash
from .conversation import (
    ClipRegistry,
    ConversationSample,
    Segment,
    Turn,
    save_corpus_jsonl,
)
from .errors import ClientError, ValidationError
from . import kernels

_ASSET_DIR = os.path.join(os.path.dirname(__file__), "assets", "prompts")


def load_prompt(name: str) -> str:
    with open(os.path.join(_ASSET_DIR, f"{name}.txt"), "r", encoding="utf-8") as f:
        return f.read()


def render_prompt(name: str, **slots) -> str:
    """Fill every ``{slot}`` of a prompt asset; unknown slots are an error."""
    text = load_prompt(name)
    try:
        return text.format(**slots)
    except KeyError as exc:
        raise ValidationError(f"prompt {name!r} is missing slot value {exc}") from exc


@dataclass
class SeedSample:
    """One synthesis job input: a caption, optionally backed by a source clip."""

    id: str
    caption: str
    clip: object = None
    task: str = "editing"


class ScriptParseError(ValueError):
    pass


_LINE = re.compile(r"^\s*(User|AI)\s*:\s*(.*)$", re.IGNORECASE)
_BRACKET = re.compile(r"\[([^\[\]]+)\]")


def parse_script(text: str) -> list[tuple[str, str]]:
    """Split a scripted conversation into (role, utterance) pairs."""
    turns = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        m = _LINE.match(raw)
        if not m:
            if not turns:
                raise ScriptParseError(f"script line without a role prefix: {raw!r}")
            turns[-1] = (turns[-1][0], turns[-1][1] + " " + raw.strip())
            continue
        role = "user" if m.group(1).lower() == "user" else "assistant"
        turns.append((role, m.group(2).strip()))
    if not turns:
        raise ScriptParseError("script is empty")
    if turns[0][0] != "user":
        raise ScriptParseError("script must start with a User line")
    return turns


def synthesize_conversation(
    seed: SeedSample,
    mode: str,
    llm_client,
    t2m_client,
    registry: ClipRegistry,
    retry_budget: int = 2,
    call_log: list | None = None,
) -> ConversationSample:
    """Build one gated-ready conversation from a seed.

    ``dataset_plus_synth`` keeps the seed clip as the first motion;
    ``both_synth`` synthesizes both motions from scripted captions.
    """
    if mode not in ("dataset_plus_synth", "both_synth"):
        raise ValidationError(f"unknown synthesis mode {mode!r}")

    def ask(template_id, slots):
        request = {"template_id": template_id, "slot_values": slots}
        text = call_with_retries(llm_client, request, retry_budget)
        if call_log is not None:
            call_log.append(
                {"job": seed.id, "template_id": template_id,
                 "request_hash": request_hash(request), "response_hash": response_hash(text)}
            )
        return text

    captions: dict[str, str] = {}
    placeholder_clip_ids: dict[str, str] = {}

    def scripted(template_id, slots):
        """Fetch a conversation script, re-asking once on malformed output."""
        for attempt in range(2):
            text = ask(template_id, slots)
            try:
                parsed = parse_script(text)
                if not _BRACKET.search(text):
                    raise ScriptParseError("no bracketed motion captions")
                return parsed
            except ScriptParseError as exc:
                if attempt:
                    raise ClientError(f"unparseable conversation script: {exc}") from exc

    if mode == "dataset_plus_synth":
        if seed.clip is None:
            raise ValidationError("dataset_plus_synth needs a seed clip")
        seed_clip_id = f"{seed.id}.m0"
        registry.add(seed_clip_id, seed.clip)
        captions[seed_clip_id] = seed.caption
        placeholder_clip_ids["motion_placeholder_1"] = seed_clip_id
        if seed.task == "editing":
            caption2 = None
            for attempt in range(2):
                edited = ask("edit_caption", {"caption": seed.caption})
                m = re.search(r"Motion 2:\s*\[([^\[\]]+)\]", edited)
                if m is not None:
                    caption2 = m.group(1).strip()
                    break
            if caption2 is None:
                raise ClientError("edit_caption response missing a Motion 2 bracket")
            script = scripted("edit_pair", {"caption1": seed.caption, "caption2": caption2})
            placeholder_caption2 = caption2
        else:
            script = scripted("reason_seeded", {"caption": seed.caption})
            placeholder_caption2 = None
    else:
        script = scripted("fresh_pair", {"topic": seed.caption})
        placeholder_caption2 = None

    def synth(caption):
        clip_id = f"{seed.id}.m{len(captions)}"
        registry.add(clip_id, t2m_client.synthesize(caption))
        captions[clip_id] = caption
        return clip_id

    turns = []
    for role, utterance in script:
        segments = []
        pos = 0
        for m in _BRACKET.finditer(utterance):
            before = utterance[pos : m.start()]
            if before.strip():
                segments.append(Segment.of_text(before))
            token = m.group(1).strip()
            if token in placeholder_clip_ids:
                segments.append(Segment.of_motion(placeholder_clip_ids[token]))
            elif token == "motion_placeholder_2" and placeholder_caption2 is not None:
                segments.append(Segment.of_motion(synth(placeholder_caption2)))
            else:
                segments.append(Segment.of_motion(synth(token)))
            pos = m.end()
        tail = utterance[pos:]
        if tail.strip() or not segments:
            segments.append(Segment.of_text(tail if tail.strip() else utterance))
        turns.append(Turn(role, segments))

    return ConversationSample(
        id=f"conv-{seed.id}",
        turns=turns,
        task_tag=seed.task,
        motion_captions=captions,
    )


@dataclass
class GateConfig:
    retrieval_threshold: float = 0.5
    diversity_window: int = 32
    min_frames: int = 8
    max_frames: int = 512
    pool_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.retrieval_threshold <= 1.0:
            raise ValidationError("retrieval threshold must be in [0, 1]")


@dataclass
class GateResult:
    accepted: bool
    retrieval_top3: float
    diversity: float
    reasons: list


def quality_gate(
    conv: ConversationSample,
    retrieval_model,
    gate_config: GateConfig,
    registry: ClipRegistry,
    pool: dict | None = None,
) -> GateResult:
    """Accept iff the caption<->motion top-3 retrieval fraction clears the
    threshold and every referenced clip's length is within bounds.

    ``pool`` maps candidate clip ids to motion features; each pair is
    ranked inside 1 match + up to ``pool_size - 1`` sampled mismatches
    (the matched clip excluded), ties counting against the match.
    """
    reasons = []
    rng = np.random.default_rng(gate_config.seed)
    pairs = [(cid, cap) for cid, cap in sorted(conv.motion_captions.items())]
    if not pairs:
        raise ValidationError("conversation carries no caption/motion pairs to gate")

    for clip_id in conv.motion_clip_ids():
        frames = registry.get(clip_id).num_frames
        if not gate_config.min_frames <= frames <= gate_config.max_frames:
            reasons.append(f"{clip_id}: {frames} frames outside bounds")

    hits = 0
    for clip_id, caption in pairs:
        text_vec = retrieval_model.text_features(caption)
        match_vec = retrieval_model.motion_features(registry.get(clip_id))
        match_d = float(np.linalg.norm(text_vec - match_vec))
        better = 0
        if pool:
            others = [pool[k] for k in sorted(pool) if k != clip_id]
            if others:
                others = np.stack(others)
                want = gate_config.pool_size - 1
                n = len(others)
                idx = rng.permutation(n)[:want] if n > want else np.arange(n)
                dists = np.sqrt(kernels.pairwise_sqdist(text_vec[None, :], others[idx]))[0]
                better = int(np.sum(dists <= match_d))  # ties favor the mismatch
        if 1 + better <= 3:
            hits += 1
    retrieval = hits / len(pairs)
    if retrieval < gate_config.retrieval_threshold:
        reasons.append(f"retrieval top-3 {retrieval:.3f} below threshold")

    diversity = 0.0
    if pool and len(pool) >= 2:
        feats = np.stack([pool[k] for k in sorted(pool)])[-gate_config.diversity_window :]
        half = len(feats) // 2
        perm = rng.permutation(len(feats))
        a, b = feats[perm[:half]], feats[perm[half : 2 * half]]
        diversity = float(np.mean(np.linalg.norm(a - b, axis=1)))
    return GateResult(not reasons, retrieval, diversity, reasons)


def split_corpus(samples, ratios=(0.8, 0.05, 0.15), seed: int = 0):
    """Assign train/val/test tags; counts follow the largest-remainder rule
    (within one of exact proportions) and the shuffle is seeded."""
    if not samples:
        raise ValidationError("cannot split an empty corpus")
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValidationError("ratios must be three values summing to 1")
    n = len(samples)
    exact = [r * n for r in ratios]
    counts = [int(x) for x in exact]
    remainders = [x - int(x) for x in exact]
    for _ in range(n - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0
    order = np.random.default_rng(seed).permutation(n)
    names = ("train", "val", "test")
    start = 0
    for name, count in zip(names, counts):
        for i in order[start : start + count]:
            samples[i].split = name
        start += count
    return samples


@dataclass
class BuildReport:
    completed: list = field(default_factory=list)
    failed: dict = field(default_factory=dict)  # job id -> reason
    rejected: dict = field(default_factory=dict)  # conv id -> reasons
    split_counts: dict = field(default_factory=dict)
    diversity: float = 0.0
    retrieval_mean: float = 0.0


def build_corpus(
    seeds,
    mode,
    llm_client,
    t2m_client,
    retrieval_model,
    gate_config: GateConfig,
    out_dir,
    seed: int = 0,
    workers: int = 1,
    ratios=(0.8, 0.05, 0.15),
) -> BuildReport:
    """Run synthesis jobs (resumably), gate, split, and write the corpus.

    Outputs under ``out_dir``: ``jobs/`` per-job conversations and clips,
    ``checkpoint.json`` with completed/failed job ids, ``client_log.jsonl``
    with request/response hashes, and ``corpus.jsonl`` + ``clips/`` for the
    accepted, split corpus.
    """
    os.makedirs(out_dir, exist_ok=True)
    jobs_dir = os.path.join(out_dir, "jobs")
    os.makedirs(jobs_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.json")
    state = {"completed": [], "failed": {}}
    if os.path.exists(ckpt_path):
        with open(ckpt_path, "r", encoding="utf-8") as f:
            state = json.load(f)

    def run_job(seed_sample):
        registry = ClipRegistry()
        log: list = []
        conv = synthesize_conversation(
            seed_sample, mode, llm_client, t2m_client, registry, call_log=log
        )
        job_dir = os.path.join(jobs_dir, seed_sample.id)
        os.makedirs(job_dir, exist_ok=True)
        registry.save_dir(os.path.join(job_dir, "clips"))
        with open(os.path.join(job_dir, "conversation.json"), "w", encoding="utf-8") as f:
            json.dump(
                {"conversation": conv.to_json_dict(), "captions": conv.motion_captions},
                f,
                sort_keys=True,
            )
        return log

    pending = [s for s in seeds if s.id not in state["completed"]]
    log_path = os.path.join(out_dir, "client_log.jsonl")
    if pending:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(lambda s: (s, _try_job(run_job, s)), pending))
        with open(log_path, "a", encoding="utf-8") as logf:
            for seed_sample, outcome in sorted(results, key=lambda r: r[0].id):
                ok, payload = outcome
                if ok:
                    state["completed"].append(seed_sample.id)
                    state["failed"].pop(seed_sample.id, None)
                    for entry in payload:
                        logf.write(json.dumps(entry, sort_keys=True) + "\n")
                else:
                    state["failed"][seed_sample.id] = payload
        state["completed"] = sorted(set(state["completed"]))
        with open(ckpt_path, "w", encoding="utf-8") as f:
            json.dump(state, f, sort_keys=True)

    # assemble: load all completed jobs in job-id order
    registry = ClipRegistry()
    conversations = []
    for job_id in state["completed"]:
        job_dir = os.path.join(jobs_dir, job_id)
        with open(os.path.join(job_dir, "conversation.json"), "r", encoding="utf-8") as f:
            doc = json.load(f)
        conv = ConversationSample.from_json_dict(doc["conversation"])
        conv.motion_captions = doc["captions"]
        clips = ClipRegistry.load_dir(os.path.join(job_dir, "clips"))
        for clip_id in clips.ids():
            registry.add(clip_id, clips.get(clip_id))
        conversations.append(conv)

    report = BuildReport(completed=list(state["completed"]), failed=dict(state["failed"]))
    if not conversations:
        save_corpus_jsonl(os.path.join(out_dir, "corpus.jsonl"), [])
        return report

    pool = {cid: retrieval_model.motion_features(registry.get(cid)) for cid in registry.ids()}
    accepted = []
    retrievals = []
    for conv in conversations:
        result = quality_gate(conv, retrieval_model, gate_config, registry, pool)
        retrievals.append(result.retrieval_top3)
        report.diversity = result.diversity or report.diversity
        if result.accepted:
            accepted.append(conv)
        else:
            report.rejected[conv.id] = result.reasons
    report.retrieval_mean = float(np.mean(retrievals)) if retrievals else 0.0

    if accepted:
        split_corpus(accepted, ratios, seed)
    save_corpus_jsonl(os.path.join(out_dir, "corpus.jsonl"), accepted)
    clips_out = ClipRegistry()
    for conv in accepted:
        for clip_id in conv.motion_clip_ids():
            if clip_id not in clips_out:
                clips_out.add(clip_id, registry.get(clip_id))
    clips_out.save_dir(os.path.join(out_dir, "clips"))
    for name in ("train", "val", "test"):
        report.split_counts[name] = sum(1 for c in accepted if c.split == name)
    return report


def _try_job(run_job, seed_sample):
    try:
        return True, run_job(seed_sample)
    except (ClientError, ValidationError) as exc:
        return False, str(exc)
