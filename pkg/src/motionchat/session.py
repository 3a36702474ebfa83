"""Multi-turn session over a trained model: attach clips, chat, decode.

Each turn is rendered to tokens with the stage-3 serialization. When the
context would overflow, whole turns are dropped from the front (a motion
span is never split). Generated motion spans are decoded through the
tokenizer and saved into the session's clip registry, which is how later
turns can reference earlier motions (including incrementally adding more
people by attaching already-generated clips).
"""

from dataclasses import dataclass, field
import json
import os

from .codec import EOS, GrammarError, scan_sequence
from .conversation import ClipRegistry, Segment, Turn
from .errors import ValidationError
from .motion import load_motion_json, save_motion_json
from .quantizer import CodeGrid
from .rqvae import decode_grid
from .sampling import SamplingConfig, generate
from .templates import render_stage3_prompt, render_turns


@dataclass
class SessionState:
    model_params: object
    rq_params: object
    manifest: object
    text_tokenizer: object
    sampling: SamplingConfig
    out_dir: str | None = None
    adapter: object = None
    registry: ClipRegistry = field(default_factory=ClipRegistry)
    turns: list = field(default_factory=list)
    dropped_turns: int = 0
    generated: int = 0
    attached: int = 0

    def token_ids(self) -> list[int]:
        """Current context as token ids (always re-rendered from turns)."""
        return render_turns(
            self.turns, self.registry, self.rq_params, self.manifest, self.text_tokenizer
        )

    def user_turn(self, text: str, clip_paths=()) -> Turn:
        """Append a user turn; clip attachments are loaded and registered.
        A bad attachment aborts the turn before anything is committed."""
        segments = []
        loaded = []
        for path in clip_paths:
            if not os.path.exists(path):
                raise ValidationError(f"attachment not found: {path}")
            loaded.append(load_motion_json(path))
        if text:
            segments.append(Segment.of_text(text))
        for clip in loaded:
            clip_id = f"att-{self.attached:04d}"
            self.attached += 1
            self.registry.add(clip_id, clip)
            if segments and segments[-1].kind == "text":
                segments[-1] = Segment.of_text(segments[-1].text + " ")
            segments.append(Segment.of_motion(clip_id))
        if not segments:
            raise ValidationError("user turn needs text or at least one clip")
        turn = Turn("user", segments)
        self.turns.append(turn)
        return turn

    def _prompt_ids(self) -> list[int]:
        return render_stage3_prompt(
            self.turns, self.registry, self.rq_params, self.manifest, self.text_tokenizer
        )

    def _fit_context(self, reserve: int) -> list[str]:
        """Drop oldest turns until the prompt plus ``reserve`` tokens fit."""
        warnings = []
        limit = self.model_params.config.context_length
        while True:
            if len(self._prompt_ids()) + reserve <= limit:
                return warnings
            if len(self.turns) <= 1:
                raise ValidationError("a single turn exceeds the model context")
            dropped = self.turns.pop(0)
            self.dropped_turns += 1
            warnings.append(f"context overflow: dropped oldest {dropped.role} turn")

    def assistant_turn(self):
        """Generate the next assistant turn; decode motion spans to clips.

        Returns (turn, printable_parts, warnings) where printable parts are
        text strings and generated clip ids.
        """
        warnings = self._fit_context(reserve=self.sampling.max_new_tokens)
        prompt = self._prompt_ids()
        sampling = SamplingConfig(
            temperature=self.sampling.temperature,
            top_k=self.sampling.top_k,
            max_new_tokens=self.sampling.max_new_tokens,
            stop_ids=tuple(set(self.sampling.stop_ids) | {EOS}),
            seed=self.sampling.seed + self.generated,
            greedy=self.sampling.greedy,
        )
        new_ids = generate(prompt, self.model_params, sampling, adapter=self.adapter)
        content = [i for i in new_ids if i != EOS]
        try:
            parts = scan_sequence(content, self.manifest, self.text_tokenizer, strict=False)
        except GrammarError as exc:
            warnings.append(f"generated motion span does not parse: {exc}")
            parts = [self.text_tokenizer.decode([i for i in content if i < 256])]
        segments = []
        printable = []
        for part in parts:
            if isinstance(part, CodeGrid):
                clip_id = f"gen-{self.generated:04d}"
                self.generated += 1
                clip = decode_grid(part, self.rq_params)
                self.registry.add(clip_id, clip)
                if self.out_dir:
                    os.makedirs(self.out_dir, exist_ok=True)
                    save_motion_json(os.path.join(self.out_dir, f"{clip_id}.motion.json"), clip)
                segments.append(Segment.of_motion(clip_id))
                printable.append(f"<{clip_id}>")
            elif part:
                segments.append(Segment.of_text(part))
                printable.append(part)
        if not segments:
            segments = [Segment.of_text("")]
            printable = [""]
        turn = Turn("assistant", segments)
        self.turns.append(turn)
        return turn, printable, warnings

    def export_transcript(self, path) -> dict:
        doc = {
            "dropped_turns": self.dropped_turns,
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
            "token_ids": self.token_ids(),
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)
        return doc


def run_script(state: SessionState, script: list) -> list:
    """Replay scripted user turns; returns per-turn assistant outputs.

    Script entries: {"text": str, "clips": [paths]}.
    """
    outputs = []
    for entry in script:
        state.user_turn(entry.get("text", ""), entry.get("clips", ()))
        turn, printable, warnings = state.assistant_turn()
        outputs.append({"printable": printable, "warnings": warnings})
    return outputs
