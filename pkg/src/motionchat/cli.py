"""Command-line interface.

Subcommands: tokenizer-train, encode, decode, data-build, train, eval,
generate, session, export-keypoints. Exit codes: 0 success, 2 usage,
3 validation/grammar, 4 training, 5 client failure.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt_io
from . import rqvae
from .clients import StubLLMClient, StubTextToMotionClient
from .codec import ByteTextTokenizer, GrammarError, VocabManifest
from .conversation import ClipRegistry, load_corpus_jsonl
from .errors import ClientError, TrainingError, ValidationError
from .features import FeatureSet, ReferenceFeatureExtractor
from .judge import judge_motion_reasoning
from .metrics import diversity as diversity_metric
from .metrics import fid as fid_metric
from .metrics import mmdist as mmdist_metric
from .metrics import mpjpe as mpjpe_metric
from .metrics import r_precision
from .motion import InteractiveClip, load_motion_json, save_motion_json
from .report import MetricReport
from .sampling import SamplingConfig
from .session import SessionState, run_script
from .synthesis import GateConfig, SeedSample, build_corpus
from .synthetic import clip_dataset
from .templates import render_stage2_sample, render_stage3_sample, tokenize_stage2
from .training import TrainConfig, run_stage2_pretrain, run_stage3_instruction_tune
from .transformer import ModelConfig, init_params


class UsageError(Exception):
    pass


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def _require_keys(config: dict, keys, where: str):
    missing = [k for k in keys if k not in config]
    if missing:
        raise UsageError(f"{where} is missing required key(s): {', '.join(missing)}")


def _write_losses(path, losses):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        for step, loss in enumerate(losses):
            writer.writerow([step, f"{loss:.8f}"])


def _load_dataset(spec: dict):
    if "dir" in spec:
        clips = []
        for name in sorted(os.listdir(spec["dir"])):
            if name.endswith(".motion.json"):
                clips.append(load_motion_json(os.path.join(spec["dir"], name)))
        if not clips:
            raise ValidationError(f"no .motion.json files under {spec['dir']}")
        return clips
    if "synthetic" in spec:
        syn = spec["synthetic"]
        _require_keys(syn, ("count", "frames"), "data.synthetic")
        from .motion import SkeletonSpec

        skeleton = SkeletonSpec(num_joints=int(syn.get("num_joints", 22)), fps=syn.get("fps", 30.0))
        return clip_dataset(int(syn.get("seed", 0)), int(syn["count"]), skeleton, int(syn["frames"]))
    raise UsageError("data must specify either 'dir' or 'synthetic'")


def cmd_tokenizer_train(args):
    config = _load_json(args.config)
    _require_keys(config, ("data", "out", "steps", "seed"), "tokenizer config")
    clips = _load_dataset(config["data"])
    fields = {
        f: config[f]
        for f in (
            "num_joints", "fps", "codebook_size", "depth", "downsample", "code_dim",
            "hidden", "dtype", "beta", "lr", "lr_schedule", "steps", "batch_size",
            "seed", "shared_codebook", "ema_codebook", "ema_decay", "dead_code_steps",
            "max_reseeds_per_step", "max_grad_norm", "kmeans_iters", "kmeans_refit_every",
        )
        if f in config
    }
    result = rqvae.train_tokenizer(clips, rqvae.TokenizerConfig(**fields))
    rqvae.save_tokenizer(config["out"], result.params)
    _write_losses(config["out"] + ".losses.csv", result.history.losses)
    print(
        f"tokenizer trained: steps={result.params.step} "
        f"mpjpe {result.history.mpjpe_initial:.4f} -> {result.history.mpjpe_final:.4f} "
        f"-> {config['out']}"
    )
    return 0


def _manifest_for(tp, vocab_path=None):
    if vocab_path and os.path.exists(vocab_path):
        manifest = VocabManifest.load(vocab_path)
        if manifest.codebook_size != tp.config.codebook_size:
            raise ValidationError(
                f"vocab codebook size {manifest.codebook_size} != tokenizer K {tp.config.codebook_size}"
            )
        return manifest
    return VocabManifest(codebook_size=tp.config.codebook_size)


def cmd_encode(args):
    tp = rqvae.load_tokenizer(args.rqvae)
    manifest = _manifest_for(tp, args.vocab)
    clip = load_motion_json(args.clip)
    grid = rqvae.encode_to_grid(clip, tp)
    from .codec import encode_grid

    seq = encode_grid(grid, manifest)
    doc = {
        "ids": seq.ids,
        "L": grid.length,
        "D": grid.depth,
        "persons": grid.persons,
        "K": manifest.codebook_size,
    }
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(doc, f)
    print(f"encoded {args.clip}: L={grid.length} D={grid.depth} persons={grid.persons} -> {args.out}")
    return 0


def cmd_decode(args):
    tp = rqvae.load_tokenizer(args.rqvae)
    manifest = _manifest_for(tp, args.vocab)
    doc = _load_json(args.tokens)
    for key, expected in (("K", manifest.codebook_size), ("D", tp.config.depth)):
        if key in doc and doc[key] != expected:
            raise ValidationError(f"token file header {key}={doc[key]} does not match {expected}")
    from .codec import decode_motion_span

    span = decode_motion_span(doc["ids"], manifest)
    if "L" in doc and span.grid.length != doc["L"]:
        raise ValidationError(f"token file header L={doc['L']} does not match parsed {span.grid.length}")
    clip = rqvae.decode_grid(span.grid, tp)
    save_motion_json(args.out, clip)
    frames = clip.num_frames
    print(f"decoded {args.tokens}: {frames} frames -> {args.out}")
    return 0


def cmd_data_build(args):
    seeds_doc = _load_json(args.seeds)
    skeleton_joints = int(args.num_joints)
    t2m = StubTextToMotionClient()
    llm = StubLLMClient()
    if args.clients != "stub":
        raise UsageError("only the in-repo stub clients are available offline")
    seeds = []
    for entry in seeds_doc:
        _require_keys(entry, ("id", "caption"), "seed entry")
        clip = load_motion_json(entry["clip"]) if "clip" in entry else None
        if args.mode == "dataset_plus_synth" and clip is None:
            clip = StubTextToMotionClient().synthesize(entry["caption"])
        seeds.append(SeedSample(entry["id"], entry["caption"], clip, entry.get("task", "editing")))
    gate = GateConfig(retrieval_threshold=args.gate_threshold, seed=args.seed)
    extractor = ReferenceFeatureExtractor(num_joints=skeleton_joints, seed=args.seed)
    report = build_corpus(
        seeds,
        args.mode,
        llm,
        t2m,
        extractor,
        gate,
        args.out,
        seed=args.seed,
        workers=args.workers,
    )
    total = len(report.completed)
    accepted = sum(report.split_counts.values())
    print(f"jobs completed: {total}, failed: {len(report.failed)}")
    for job, reason in sorted(report.failed.items()):
        print(f"  FAILED {job}: {reason}")
    for conv, reasons in sorted(report.rejected.items()):
        print(f"  REJECTED {conv}: {'; '.join(reasons)}")
    print(
        f"accepted {accepted} conversations "
        f"(split {report.split_counts.get('train', 0)}/{report.split_counts.get('val', 0)}"
        f"/{report.split_counts.get('test', 0)}) -> {os.path.join(args.out, 'corpus.jsonl')}"
    )
    if accepted == 0:
        print("warning: gate rejected every conversation; corpus is empty")
    return 0


def _model_from_config(doc, manifest):
    model_doc = doc.get("model", {})
    cfg = ModelConfig(
        vocab_size=manifest.total_size,
        n_layers=int(model_doc.get("n_layers", 4)),
        width=int(model_doc.get("width", 256)),
        n_heads=int(model_doc.get("n_heads", 4)),
        context_length=int(model_doc.get("context_length", 1024)),
        dtype=model_doc.get("dtype", "float32"),
        seed=int(doc.get("seed", 0)),
    )
    return init_params(cfg)


def cmd_train(args):
    doc = _load_json(args.config)
    _require_keys(doc, ("rqvae", "corpus", "steps", "seed", "out"), "train config")
    tp = rqvae.load_tokenizer(doc["rqvae"])
    manifest = _manifest_for(tp, doc.get("vocab"))
    text_tok = ByteTextTokenizer()
    config = TrainConfig(
        stage=args.stage,
        steps=int(doc["steps"]),
        batch_size=int(doc.get("batch_size", 8)),
        lr=float(doc.get("lr", 1e-4)),
        warmup_ratio=float(doc.get("warmup_ratio", 0.01)),
        lr_schedule=doc.get("lr_schedule", "cosine"),
        weight_decay=float(doc.get("weight_decay", 0.01)),
        seed=int(doc["seed"]),
        lora_rank=int(doc.get("lora_rank", 8)),
        lora_alpha=float(doc.get("lora_alpha", 16.0)),
        lora_dropout=float(doc.get("lora_dropout", 0.05)),
        checkpoint_dir=doc.get("checkpoint_dir"),
    )
    if config.checkpoint_dir:
        os.makedirs(config.checkpoint_dir, exist_ok=True)

    if args.stage == 2:
        pairs = _load_json(doc["corpus"])
        registry = ClipRegistry()
        samples = []
        for i, entry in enumerate(pairs):
            _require_keys(entry, ("clip", "caption", "task"), "stage-2 corpus entry")
            clip_id = f"s2-{i:05d}"
            registry.add(clip_id, load_motion_json(entry["clip"]))
            rendered = render_stage2_sample(entry["task"], clip_id, entry["caption"], registry)
            samples.append(tokenize_stage2(rendered, registry, tp, manifest, text_tok))
        params = _resume_or_init(args.resume, doc, manifest)
        result = run_stage2_pretrain(samples, params, config, resume=args.resume)
    else:
        conversations = load_corpus_jsonl(doc["corpus"])
        registry = ClipRegistry.load_dir(doc["clips"]) if "clips" in doc else ClipRegistry()
        samples = [
            render_stage3_sample(conv, registry, tp, manifest, text_tok) for conv in conversations
        ]
        params = _resume_or_init(args.resume, doc, manifest)
        result = run_stage3_instruction_tune(samples, params, config, resume=args.resume)

    ckpt_io.save_checkpoint(
        doc["out"], result.params, adapter=result.adapter, step=result.final_step
    )
    _write_losses(doc["out"] + ".losses.csv", [loss for _, loss, _ in result.history])
    first = result.history[0][1] if result.history else float("nan")
    last = result.history[-1][1] if result.history else float("nan")
    print(f"stage-{args.stage} training done: loss {first:.4f} -> {last:.4f}, "
          f"steps={result.final_step} -> {doc['out']}")
    return 0


def _resume_or_init(resume, doc, manifest):
    if resume:
        return ckpt_io.load_checkpoint(resume).params
    return _model_from_config(doc, manifest)


def _load_clip_dir(directory):
    clips = {}
    for name in sorted(os.listdir(directory)):
        if name.endswith(".motion.json"):
            clips[name[: -len(".motion.json")]] = load_motion_json(os.path.join(directory, name))
    if not clips:
        raise ValidationError(f"no .motion.json files under {directory}")
    return clips


def cmd_eval(args):
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    known = {"fid", "mpjpe", "rprec", "div", "mmdist", "judge"}
    unknown = set(metrics) - known
    if unknown:
        raise UsageError(f"unknown metric(s): {', '.join(sorted(unknown))}")
    pred = _load_clip_dir(args.pred)
    ref = _load_clip_dir(args.ref)
    needs_features = {"fid", "rprec", "div", "mmdist"} & set(metrics)
    if needs_features and args.extractor == "none":
        raise UsageError(
            f"metrics {', '.join(sorted(needs_features))} need a feature extractor "
            "(drop --extractor none)"
        )
    captions = _load_json(args.captions) if args.captions else None
    if ("rprec" in metrics or "mmdist" in metrics) and captions is None:
        raise UsageError("rprec/mmdist need --captions (clip id -> caption map)")

    report = MetricReport()
    extractor = None
    if needs_features:
        sample = next(iter(pred.values()))
        extractor = ReferenceFeatureExtractor(
            num_joints=sample.skeleton.num_joints, seed=args.seed
        )
        pred_feats = FeatureSet(
            np.stack([extractor.motion_features(pred[k]) for k in sorted(pred)]), "motion"
        )
        ref_feats = FeatureSet(
            np.stack([extractor.motion_features(ref[k]) for k in sorted(ref)]), "motion"
        )
    if "fid" in metrics:
        report.fid = fid_metric(pred_feats, ref_feats)
    if "mpjpe" in metrics:
        shared = sorted(set(pred) & set(ref))
        if not shared:
            raise ValidationError("pred and ref directories share no clip names")
        report.mpjpe = float(np.mean([mpjpe_metric(pred[k], ref[k]) for k in shared]))
    if "rprec" in metrics or "mmdist" in metrics:
        ids = [k for k in sorted(pred) if k in captions]
        if not ids:
            raise ValidationError("no caption entries match the prediction clip names")
        text_feats = FeatureSet(
            np.stack([extractor.text_features(captions[k]) for k in ids]), "text"
        )
        motion_feats = FeatureSet(
            np.stack([extractor.motion_features(pred[k]) for k in ids]), "motion"
        )
        if "rprec" in metrics:
            rp = r_precision(motion_feats, text_feats, pool=args.pool, seed=args.seed)
            report.r_precision = {str(k): v for k, v in rp.items()}
        if "mmdist" in metrics:
            report.mmdist = mmdist_metric(motion_feats, text_feats)
    if "div" in metrics:
        report.diversity = diversity_metric(pred_feats, seed=args.seed)
    if "judge" in metrics:
        if not args.judge_corpus:
            raise UsageError("judge needs --judge-corpus (conversation JSONL)")
        conversations = load_corpus_jsonl(args.judge_corpus)
        client = StubLLMClient()
        scores = []
        for conv in conversations:
            refcaps = {cid: [captions[cid]] for cid in conv.motion_clip_ids()} if captions else {}
            result = judge_motion_reasoning(conv, client, refcaps, cache_dir=args.judge_cache)
            scores.append(result.scores)
            if result.clamped:
                report.warnings.append(f"{conv.id}: judge score clamped to [0, 10]")
        report.judge = {
            name: float(np.mean([s[name] for s in scores]))
            for name in ("coherence", "alignment", "naturalness")
        }
    report.save(args.out)
    print(f"metric report -> {args.out}")
    for key, value in sorted(report.to_json_dict().items()):
        print(f"  {key}: {value}")
    return 0


def _load_session(args):
    tp = rqvae.load_tokenizer(args.rqvae)
    manifest = _manifest_for(tp, args.vocab)
    ck = ckpt_io.load_checkpoint(args.ckpt)
    if ck.params.config.vocab_size != manifest.total_size:
        raise ValidationError(
            f"model vocab {ck.params.config.vocab_size} != manifest size {manifest.total_size}"
        )
    sampling = SamplingConfig(
        temperature=args.temperature,
        top_k=args.top_k,
        max_new_tokens=args.max_new_tokens,
        seed=args.seed,
        greedy=args.greedy,
    )
    return SessionState(
        model_params=ck.params,
        rq_params=tp,
        manifest=manifest,
        text_tokenizer=ByteTextTokenizer(),
        sampling=sampling,
        out_dir=args.out_dir,
        adapter=ck.adapter,
    )


def cmd_generate(args):
    state = _load_session(args)
    state.user_turn(args.prompt, args.clip or ())
    _, printable, warnings = state.assistant_turn()
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(" ".join(printable))
    return 0


def cmd_session(args):
    state = _load_session(args)
    if args.script:
        script = _load_json(args.script)
        outputs = run_script(state, script)
        for i, out in enumerate(outputs):
            for warning in out["warnings"]:
                print(f"warning: {warning}", file=sys.stderr)
            print(f"[{i}] ASSISTANT: {' '.join(out['printable'])}")
    else:  # pragma: no cover - interactive loop
        print("type a message; '/attach <path>' to include a clip; '/quit' to exit")
        attachments = []
        while True:
            try:
                line = input("USER> ").strip()
            except EOFError:
                break
            if line == "/quit":
                break
            if line.startswith("/attach "):
                attachments.append(line[len("/attach ") :].strip())
                continue
            try:
                state.user_turn(line, attachments)
            except ValidationError as exc:
                print(f"error: {exc} (turn not committed)", file=sys.stderr)
                attachments = []
                continue
            attachments = []
            _, printable, warnings = state.assistant_turn()
            for warning in warnings:
                print(f"warning: {warning}", file=sys.stderr)
            print("ASSISTANT:", " ".join(printable))
    if args.transcript:
        state.export_transcript(args.transcript)
        print(f"transcript -> {args.transcript}")
    return 0


def cmd_export_keypoints(args):
    clip = load_motion_json(args.clip)
    persons = clip.persons if isinstance(clip, InteractiveClip) else (clip,)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "person", "joint", "x", "y", "z"])
        for person_idx, person in enumerate(persons):
            positions = person.positions
            for frame in range(positions.shape[0]):
                for joint in range(positions.shape[1]):
                    x, y, z = positions[frame, joint]
                    writer.writerow([frame, person_idx, joint, f"{x:.9g}", f"{y:.9g}", f"{z:.9g}"])
    print(f"keypoints -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motionchat", description=__doc__)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenizer-train", help="train the motion tokenizer")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_tokenizer_train)

    p = sub.add_parser("encode", help="motion clip -> token file")
    p.add_argument("--clip", required=True)
    p.add_argument("--rqvae", required=True)
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="token file -> motion clip")
    p.add_argument("--tokens", required=True)
    p.add_argument("--rqvae", required=True)
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("data-build", help="synthesize a conversation corpus")
    p.add_argument("--seeds", required=True, help="JSON list of {id, caption[, clip][, task]}")
    p.add_argument("--mode", choices=["dataset_plus_synth", "both_synth"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--gate-threshold", type=float, default=0.5)
    p.add_argument("--clients", default="stub")
    p.add_argument("--num-joints", type=int, default=22)
    p.set_defaults(fn=cmd_data_build)

    p = sub.add_parser("train", help="stage-2 pretraining or stage-3 instruction tuning")
    p.add_argument("--stage", type=int, choices=[2, 3], required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--resume")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="compute metrics over clip directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics", default="fid,mpjpe")
    p.add_argument("--pool", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--captions", help="JSON map clip id -> caption")
    p.add_argument("--extractor", choices=["reference", "none"], default="reference")
    p.add_argument("--judge-corpus")
    p.add_argument("--judge-cache")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    for name in ("generate", "session"):
        p = sub.add_parser(name)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--rqvae", required=True)
        p.add_argument("--vocab")
        p.add_argument("--out-dir")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--temperature", type=float, default=1.0)
        p.add_argument("--top-k", type=int, default=50)
        p.add_argument("--max-new-tokens", type=int, default=256)
        p.add_argument("--greedy", action="store_true")
        if name == "generate":
            p.add_argument("--prompt", required=True)
            p.add_argument("--clip", action="append")
            p.set_defaults(fn=cmd_generate)
        else:
            p.add_argument("--script", help="JSON list of {text[, clips]} turns")
            p.add_argument("--transcript", help="write the transcript JSON here")
            p.set_defaults(fn=cmd_session)

    p = sub.add_parser("export-keypoints", help="clip -> CSV of joint positions")
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_keypoints)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, GrammarError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 4
    except ClientError as exc:
        print(f"client error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
