"""Command-line front end.

Subcommands: ``prepare-data`` (synthesize or convert corpora), ``train``,
``eval``, ``compose`` (manual skill-triggered generation), ``bench`` (cost
model verification and timing), and ``gradcheck`` (finite-difference
validation).  Every report path also renders its figure next to the delimited
output.  Configuration precedence: command-line flags over config file over
preset.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import costbench, plots
from .data import (
    Corpus,
    CorpusSchema,
    DialogueExample,
    Vocabulary,
    dialogues_to_examples,
    generate_synthetic_corpus,
    load_corpus,
    save_corpus,
    tokens_from_ids,
    vectorize,
)
from .experts import (
    DEFAULT_SKILLS,
    ExpertSeq2Seq,
    VARIANTS,
    build_model,
    export_alphas,
    load_model,
    manual_attention,
)
from .gradcheck import finite_difference_check
from .metrics import activity_oracle, evaluate
from .training import TrainConfig, train, vectorize_all
from .transformer import ModelConfig, greedy_decode

PRESETS = {
    "desk": {"d": 64, "heads": 2, "head_depth": 16, "filter_size": 128,
             "layers": 1, "hops": 1, "batch_size": 16, "lr": 1e-3,
             "schedule": "constant", "epochs": 30, "patience": 5},
    "paper": {"d": 300, "heads": 2, "head_depth": 40, "filter_size": 50,
              "layers": 1, "hops": 1, "batch_size": 16, "lr": 1e-3,
              "schedule": "warmup", "epochs": 100, "patience": 10},
}

ARCH_KEYS = ("d", "heads", "head_depth", "filter_size", "layers", "hops", "max_segments")
TRAIN_KEYS = ("batch_size", "lr", "schedule", "warmup_steps", "epochs", "patience",
              "clip_norm", "seed", "max_steps")


def read_config_file(path) -> dict:
    """Plain ``key = value`` lines; blank lines and # comments ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_settings(args, keys) -> dict:
    """Merge preset, config file, and explicit flags for the given keys."""
    settings = dict(PRESETS[args.preset])
    # the full-scale table narrows the recurrent baseline
    if args.preset == "paper" and getattr(args, "variant", None) == "MoE":
        settings["d"] = 100
        settings["schedule"] = "constant"
    if getattr(args, "config", None):
        for key, value in read_config_file(args.config).items():
            settings[key] = value
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def model_config_from(settings, n_experts: int) -> ModelConfig:
    d = int(settings["d"])
    return ModelConfig(
        d=d, d_model=d,
        heads=int(settings["heads"]),
        head_depth=int(settings["head_depth"]),
        filter_size=int(settings["filter_size"]),
        layers=int(settings.get("layers", 1)),
        hops=int(settings.get("hops", 1)),
        experts=n_experts,
        max_segments=int(settings.get("max_segments", 32)),
    )


def echo_config(command: str, settings: dict) -> None:
    print(f"[{command}] " + " ".join(f"{k}={v}" for k, v in sorted(settings.items())))


def load_data_dir(data_dir) -> Corpus:
    data_dir = Path(data_dir)
    schema = CorpusSchema.from_json((data_dir / "schema.json").read_text())
    splits = {}
    for name in ("train", "valid", "test"):
        path = data_dir / f"{name}.jsonl"
        if path.exists():
            splits[name] = load_corpus(path, known_skills=schema.skills)
    return Corpus(splits=splits, schema=schema)


# ---------------------------------------------------------------------------
# subcommands


def cmd_prepare_data(args) -> int:
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.input:
        if not args.schema:
            print("prepare-data: --input needs --schema for the skill list", file=sys.stderr)
            return 1
        echo_config("prepare-data", {"input": args.input, "schema": args.schema})
        schema = CorpusSchema.from_json(Path(args.schema).read_text())
        raw = json.loads(Path(args.input).read_text())
        examples = dialogues_to_examples(raw["dialogues"], schema.skills)
        save_corpus(out_dir / "converted.jsonl", examples)
        (out_dir / "schema.json").write_text(schema.to_json())
        print(f"wrote {len(examples)} examples to {out_dir/'converted.jsonl'}")
        return 0
    sizes = tuple(int(s) for s in args.synthetic_sizes.split(","))
    echo_config("prepare-data", {"seed": args.seed, "sizes": sizes})
    corpus = generate_synthetic_corpus(args.seed, sizes)
    for name, examples in corpus.splits.items():
        save_corpus(out_dir / f"{name}.jsonl", examples)
    (out_dir / "schema.json").write_text(corpus.schema.to_json())
    print(f"wrote {', '.join(f'{k}:{len(v)}' for k, v in corpus.splits.items())} "
          f"examples and schema to {out_dir}")
    return 0


def cmd_train(args) -> int:
    settings = resolve_settings(args, ARCH_KEYS + TRAIN_KEYS)
    corpus = load_data_dir(args.data)
    vocab = Vocabulary.build(corpus.train)
    cfg = model_config_from(settings, len(corpus.schema.skills))
    settings["variant"] = args.variant
    settings["vocab"] = len(vocab)
    echo_config("train", settings)
    model = build_model(args.variant, cfg, vocab, corpus.schema.type_tags,
                        corpus.schema.skills, seed=int(settings.get("seed", 13)))
    out_path = Path(args.out)
    log_path = Path(args.log) if args.log else out_path.with_suffix(".log.csv")
    tcfg = TrainConfig(
        batch_size=int(settings["batch_size"]),
        lr=float(settings["lr"]),
        schedule=str(settings["schedule"]),
        warmup_steps=int(settings.get("warmup_steps", 4000)),
        max_epochs=int(settings["epochs"]),
        patience=int(settings["patience"]),
        clip_norm=float(settings.get("clip_norm", 5.0)),
        seed=int(settings.get("seed", 13)),
        max_steps=int(settings["max_steps"]) if settings.get("max_steps") else None,
        disable_skill_loss=args.variant == "AoP-noLV",
        log_path=str(log_path),
        checkpoint_path=str(out_path),
    )
    result = train(model, corpus.train, corpus.valid, tcfg)
    plots.training_curves(result.log, log_path.with_suffix(".png"))
    last = result.log[-1]
    print(f"best valid token loss {result.best_valid_loss:.4f} at epoch {result.best_epoch} "
          f"(ran {last.epoch} epochs); checkpoint {out_path}, log {log_path}")
    return 0


def cmd_eval(args) -> int:
    model, meta = load_model(args.checkpoint)
    corpus = load_data_dir(args.data)
    examples = corpus.splits[args.split]
    echo_config("eval", {"checkpoint": args.checkpoint, "split": args.split,
                         "examples": len(examples), "variant": meta["variant"]})
    oracle = activity_oracle([t for t in corpus.schema.entities if t.isalpha()])
    report, extras = evaluate(model, examples, corpus.schema.entities, nli_oracle=oracle,
                              max_length=args.max_length)
    print(report.to_table())
    if args.out:
        out_path = Path(args.out)
        out_path.write_text(json.dumps(report.to_dict(), indent=2))
        out_path.with_suffix(".txt").write_text(report.to_table() + "\n")
        if extras["alphas"]:
            alpha_path = out_path.with_suffix(".alphas.tsv")
            export_alphas(alpha_path, extras["alphas"], model.skill_names)
            plots.alpha_heatmap(extras["alphas"], model.skill_names,
                                alpha_path.with_suffix(".png"))
        print(f"report written to {out_path}")
    return 0


def parse_skill_sets(spec: str) -> list[list[str]]:
    sets = []
    for chunk in spec.split(";"):
        names = [s.strip() for s in chunk.split(",") if s.strip()]
        if names:
            sets.append(names)
    if not sets:
        raise ValueError("no skill sets given")
    return sets


def compose_demo(model: ExpertSeq2Seq, context: DialogueExample,
                 skill_sets, max_length: int = 40,
                 normalize: bool = False) -> list[dict]:
    """Generate one response per manually triggered skill set."""
    vec = vectorize(context, model.vocab, model.core.type_tags, skills=None)
    rows = []
    for names in skill_sets:
        alpha = manual_attention(names, model.bank, normalize=normalize)

        def step(prefix: np.ndarray) -> np.ndarray:
            return model.forward(vec, tgt_in=prefix, alpha_override=alpha).dist.data

        ids = greedy_decode(step, model.vocab, max_length)
        tokens = tokens_from_ids(ids, model.vocab, vec.oov_tokens)
        rows.append({"skills": names, "alpha": alpha.tolist(), "response": tokens})
    return rows


def render_compose_table(rows, skill_names) -> str:
    """One row per skill set: the weight vector actually used, then the output."""
    header = "  " + " ".join(f"{s[:4]:>4}" for s in skill_names) + "  response"
    lines = [header, "-" * len(header)]
    for row in rows:
        cells = [f"{a:4.2f}" if a else "   ." for a in row["alpha"]]
        lines.append("  " + " ".join(cells) + "  " + " ".join(row["response"]))
    return "\n".join(lines)


def cmd_compose(args) -> int:
    model, meta = load_model(args.checkpoint)
    if not isinstance(model, ExpertSeq2Seq):
        print("compose needs an expert-bank checkpoint", file=sys.stderr)
        return 1
    raw = json.loads(Path(args.context).read_text())
    context = DialogueExample(
        history=raw["history"], memory=raw.get("memory", []),
        target=raw.get("target", ["-"]), skills=raw.get("skills") or [model.skill_names[0]],
        types=raw["types"], segments=raw["segments"],
    )
    skill_sets = parse_skill_sets(args.skills)
    echo_config("compose", {"checkpoint": args.checkpoint, "sets": len(skill_sets),
                            "normalize": args.normalize})
    rows = compose_demo(model, context, skill_sets, max_length=args.max_length,
                        normalize=args.normalize)
    table = render_compose_table(rows, model.skill_names)
    print(table)
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2))
        Path(args.out).with_suffix(".txt").write_text(table + "\n")
    return 0


def cmd_bench(args) -> int:
    echo_config("bench", {"grid": args.grid, "reps": args.reps,
                          "empirical": not args.skip_empirical})
    if args.grid == "small":
        grid = costbench.default_grid(r_values=(2, 4, 13), t_values=(1, 2, 8, 32),
                                      dims=(8, 64))
    else:
        grid = costbench.default_grid()
    report = costbench.verify_theorem(grid)
    print(f"theorem grid: {report.asserted_points} asserted points, "
          f"{len(report.violations)} violations")
    payload = {"theorem": report.to_dict()}
    if not args.skip_empirical:
        skills = list(DEFAULT_SKILLS)
        cfg = ModelConfig(experts=len(skills))
        vocab = Vocabulary(
            ["<PAD>", "<SOS>", "<EOS>", "<TM>", "<UNK>"] + [f"w{i}" for i in range(115)])
        model = build_model("AoP", cfg, vocab, ["Sys", "Usr"], skills, seed=5)
        vecs = costbench.random_inputs(len(vocab), 2, count=4, src_len=32,
                                       tgt_len=args.t, seed=9, skills=13)
        empirical = costbench.empirical_compare(model, vecs, repetitions=args.reps)
        payload["empirical"] = empirical
        print(f"empirical r=13 t={args.t}: parameter mixing {empirical['aop_median_s']:.4f}s, "
              f"representation mixing {empirical['aor_median_s']:.4f}s "
              f"({empirical['aor_over_aop']:.2f}x)")
    if args.out:
        out_path = Path(args.out)
        out_path.write_text(json.dumps(payload, indent=2))
        plots.cost_curves(report.rows, out_path.with_suffix(".costs.png"))
        if "empirical" in payload:
            plots.timing_bars(payload["empirical"], out_path.with_suffix(".timing.png"))
        print(f"benchmark report written to {out_path}")
    return 0 if report.ok else 1


def cmd_gradcheck(args) -> int:
    echo_config("gradcheck", {"dims": args.dims, "experts": args.experts,
                              "seed": args.seed, "examples": args.examples})
    corpus = generate_synthetic_corpus(args.seed, (4 * max(args.examples, 1), 1, 1))
    cfg = ModelConfig(d=args.dims, d_model=args.dims, heads=2,
                      head_depth=max(args.dims // 2, 1), filter_size=2 * args.dims,
                      experts=args.experts)
    if args.experts <= len(corpus.schema.skills):
        skills = corpus.schema.skills[: args.experts]
    else:
        skills = corpus.schema.skills + [
            f"extra{i}" for i in range(args.experts - len(corpus.schema.skills))]
    examples = [e for e in corpus.train
                if set(e.skills) <= set(skills)][: max(args.examples, 1)]
    vocab = Vocabulary.build(examples)
    model = build_model("AoP", cfg, vocab, corpus.schema.type_tags, skills, seed=args.seed)
    vecs = vectorize_all(model, examples)
    report = finite_difference_check(model, vecs, step=args.step,
                                     max_per_tensor=args.max_per_tensor)
    print(f"checked {report.checked_scalars} scalars over {len(report.per_parameter)} tensors")
    print(f"max relative error {report.max_rel_error:.3e} at {report.worst_parameter}")
    if report.ok(args.tolerance):
        print(f"PASS (< {args.tolerance:g})")
        return 0
    print(f"FAIL (>= {args.tolerance:g})")
    return 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillmix",
        description="Train and analyze composable-skill sequence models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="generate the synthetic corpus or convert dialogues")
    p.add_argument("--input", help="raw annotated-dialogue JSON to convert")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--schema", help="schema JSON (required with --input)")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--synthetic-sizes", default="2000,200,200")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--data", required=True, help="directory with *.jsonl and schema.json")
    p.add_argument("--variant", choices=VARIANTS, default="AoP")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch CSV path (default: next to checkpoint)")
    for key in ("d", "heads", "head_depth", "filter_size", "layers", "hops",
                "max_segments", "batch_size", "epochs", "patience", "seed",
                "warmup_steps", "max_steps"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--schedule", choices=("constant", "warmup"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--out", help="report JSON path (figures written alongside)")
    p.add_argument("--max-length", dest="max_length", type=int, default=40)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compose", help="generate with manually selected skills")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--context", required=True, help="context example JSON")
    p.add_argument("--skills", required=True,
                   help="semicolon-separated skill sets, e.g. 'SQL,Hotel;BOOK,Hotel'")
    p.add_argument("--normalize", action="store_true",
                   help="divide the binary weights by the active count")
    p.add_argument("--out", help="write rows as JSON (table alongside)")
    p.add_argument("--max-length", dest="max_length", type=int, default=40)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("bench", help="verify the cost model and time the regimes")
    p.add_argument("--grid", choices=("default", "small"), default="default")
    p.add_argument("--reps", type=int, default=21)
    p.add_argument("--t", type=int, default=32, help="target length for the empirical run")
    p.add_argument("--skip-empirical", action="store_true")
    p.add_argument("--out", help="report JSON path (figures written alongside)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter")
    p.add_argument("--dims", type=int, default=8)
    p.add_argument("--experts", type=int, default=3)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--examples", type=int, default=1)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-per-tensor", dest="max_per_tensor", type=int,
                   help="cap checked scalars per tensor (default: all)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, LookupError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:  # console-script shim
    sys.exit(run())


if __name__ == "__main__":
    main()
