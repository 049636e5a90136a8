"""Command-line entry point.

One subcommand per pipeline stage: gen-corpus, pretrain, distill,
build-index, search, eval-recall, sweep-k, neg-study, ablate, bench-index,
finetune-reader. Flags override ``--config`` file values, which override
defaults; every run writes its fully resolved configuration next to its
outputs so it can be reproduced from that record alone. All randomness is
controlled by ``--seed``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import encoder, evaluation, index as index_mod
from .config import TrainConfig
from .distill import pretrain_student, train
from .errors import KdrError
from .synthetic import generate_synthetic


def _parse_config_file(path: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise KdrError(f"config file {path} line {lineno}: expected key=value")
        key, _, val = line.partition("=")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Precedence: explicit flag > config file > default."""
    file_vals = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key, default in defaults.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
        elif key in file_vals:
            caster = type(default) if default is not None else str
            if caster is bool:
                resolved[key] = file_vals[key].lower() in ("1", "true", "yes")
            else:
                resolved[key] = caster(file_vals[key])
        else:
            resolved[key] = default
    return resolved


def _write_run_record(out_dir: Path, command: str, resolved: dict) -> None:
    lines = [f"command={command}"]
    lines += [f"{k}={v}" for k, v in sorted(resolved.items())]
    (out_dir / f"{command}_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(resolved: dict) -> Path:
    out = Path(resolved["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_k_list(text: str) -> list[int]:
    return [int(k) for k in text.split(",") if k.strip()]


def _train_config(resolved: dict, **overrides) -> TrainConfig:
    kwargs = dict(
        temperature=resolved.get("temperature", 3.0),
        kd_weight=resolved.get("kd_weight", 1.0),
        contrastive_weight=resolved.get("contrastive_weight", 0.0),
        learning_rate=resolved.get("learning_rate", 1e-3),
        warmup_steps=resolved.get("warmup_steps", 100),
        epochs=resolved.get("epochs", 16),
        batch_size=resolved.get("batch_size", 10),
        passages_per_question=resolved.get("passages_per_question", 16),
        validation_fraction=resolved.get("validation_fraction", 1.0),
        seed=resolved.get("seed", 0),
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def _load_teacher(path: str):
    magic = Path(path).open("rb").read(4)
    if magic == encoder.TEACHER_MAGIC:
        return encoder.load_rbf_oracle(path)
    return encoder.load_reader(path)


# --- subcommand implementations ----------------------------------------------

def cmd_gen_corpus(args) -> int:
    defaults = {"passages": 1000, "questions": 100, "latent_dim": 8, "seed": 0,
                "out_dir": "out"}
    resolved = _resolve(args, defaults)
    out = _out_dir(resolved)
    corpus, questions, teacher = generate_synthetic(
        resolved["passages"], resolved["questions"], resolved["latent_dim"],
        resolved["seed"])
    corpus_mod.save_corpus(corpus, out / "corpus.jsonl")
    corpus_mod.save_questions(questions, out / "questions.jsonl")
    encoder.save_rbf_oracle(teacher, out / "teacher.bin")
    _write_run_record(out, "gen-corpus", resolved)
    return 0


def cmd_pretrain(args) -> int:
    defaults = {"corpus": None, "questions": None, "seed": 0, "out_dir": "out",
                "epochs": 10, "learning_rate": 3e-3, "warmup_steps": 20,
                "batch_size": 10, "d_in": 512, "hidden": 128, "d_emb": 32}
    resolved = _resolve(args, defaults)
    out = _out_dir(resolved)
    corpus = corpus_mod.load_corpus(resolved["corpus"])
    questions = corpus_mod.load_questions(resolved["questions"])
    student = encoder.TwoTowerStudent(d_in=resolved["d_in"], hidden=resolved["hidden"],
                                      d_emb=resolved["d_emb"], seed=resolved["seed"])
    cfg = _train_config(resolved, kd_weight=0.0, contrastive_weight=1.0)
    with open(out / "pretrain_log.txt", "w", encoding="utf-8") as fh:
        pretrain_student(student, corpus, questions, cfg,
                         log=lambda m: fh.write(m + "\n"))
    encoder.save_student(student, out / "student_pretrained.ckpt")
    _write_run_record(out, "pretrain", resolved)
    return 0


def cmd_distill(args) -> int:
    defaults = {"corpus": None, "questions": None, "teacher": None, "student": None,
                "seed": 0, "out_dir": "out", "temperature": 3.0, "kd_weight": 1.0,
                "contrastive_weight": 0.0, "learning_rate": 1e-3, "warmup_steps": 50,
                "epochs": 16, "batch_size": 10, "passages_per_question": 16,
                "validation_fraction": 1.0}
    resolved = _resolve(args, defaults)
    out = _out_dir(resolved)
    corpus = corpus_mod.load_corpus(resolved["corpus"])
    questions = corpus_mod.load_questions(resolved["questions"])
    teacher = _load_teacher(resolved["teacher"])
    student = encoder.load_student(resolved["student"])
    cfg = _train_config(resolved)
    frozen = index_mod.build_flat(student.embed_passages(corpus.passages))
    with open(out / "distill_log.txt", "w", encoding="utf-8") as fh:
        ckpt = train(student, teacher, corpus, questions, questions, frozen, cfg,
                     log=lambda m: fh.write(m + "\n"))
    student.set_params(ckpt.params)
    encoder.save_student(student, out / "student_distilled.ckpt")
    (out / "distill_checkpoint.txt").write_text(
        f"step={ckpt.step} validation_recall={ckpt.validation_recall:.6f}\n",
        encoding="utf-8")
    _write_run_record(out, "distill", resolved)
    return 0


def cmd_build_index(args) -> int:
    defaults = {"corpus": None, "student": None, "variant": "flat", "seed": 0,
                "out_dir": "out", "neighbors": 512, "construction_depth": 200,
                "search_depth": 128}
    resolved = _resolve(args, defaults)
    out = _out_dir(resolved)
    corpus = corpus_mod.load_corpus(resolved["corpus"])
    student = encoder.load_student(resolved["student"])
    emb = student.embed_passages(corpus.passages)
    variant = resolved["variant"]
    if variant == "flat":
        idx = index_mod.build_flat(emb)
    elif variant == "sq8":
        idx = index_mod.build_sq8(emb)
    elif variant == "graph":
        params = index_mod.GraphParams(resolved["neighbors"],
                                       resolved["construction_depth"],
                                       resolved["search_depth"])
        idx = index_mod.build_graph(emb, params)
    else:
        raise KdrError(f"unknown index variant {variant!r}")
    index_mod.serialize(idx, out / f"index_{variant}.bin")
    _write_run_record(out, "build-index", resolved)
    return 0


def cmd_search(args) -> int:
    defaults = {"index": None, "student": None, "query": None, "k": 10,
                "seed": 0, "out_dir": None}
    resolved = _resolve(args, defaults)
    idx = index_mod.deserialize(resolved["index"])
    student = encoder.load_student(resolved["student"])
    q = corpus_mod.Question(id=-1, tokens=tuple(resolved["query"].split()))
    res = idx.search(student.embed_question(q), resolved["k"])
    lines = [f"{rank}\t{int(pid)}\t{score:.6f}"
             for rank, (pid, score) in enumerate(zip(res.ids, res.scores), 1)]
    text = "\n".join(lines) + "\n"
    if resolved["out_dir"]:
        out = _out_dir(resolved)
        (out / "search_results.txt").write_text(text, encoding="utf-8")
        _write_run_record(out, "search", resolved)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval_recall(args) -> int:
    defaults = {"index": None, "student": None, "corpus": None, "questions": None,
                "k": "1,20,50,100", "seed": 0, "out_dir": "out"}
    resolved = _resolve(args, defaults)
    out = _out_dir(resolved)
    idx = index_mod.deserialize(resolved["index"])
    student = encoder.load_student(resolved["student"])
    corpus = corpus_mod.load_corpus(resolved["corpus"])
    questions = corpus_mod.load_questions(resolved["questions"])
    report = evaluation.recall_at_k(idx, student, questions, corpus,
                                    _parse_k_list(resolved["k"]))
    (out / "recall_report.txt").write_text(
        evaluation.format_recall_report(report, resolved["seed"], "student"),
        encoding="utf-8")
    _write_run_record(out, "eval-recall", resolved)
    return 0


def cmd_sweep_k(args) -> int:
    defaults = {"index": None, "student": None, "teacher": None, "corpus": None,
                "questions": None, "k": "1,2,5,10,20,50,100", "seed": 0,
                "out_dir": "out"}
    resolved = _resolve(args, defaults)
    out = _out_dir(resolved)
    idx = index_mod.deserialize(resolved["index"])
    student = encoder.load_student(resolved["student"])
    teacher = _load_teacher(resolved["teacher"])
    corpus = corpus_mod.load_corpus(resolved["corpus"])
    questions = corpus_mod.load_questions(resolved["questions"])
    ks = [k for k in _parse_k_list(resolved["k"]) if k <= len(corpus)]
    curve = evaluation.sweep_k(idx, student, teacher, questions, corpus, ks)
    (out / "sweep_curve.txt").write_text(
        evaluation.format_curve(curve, resolved["seed"], "sweep"), encoding="utf-8")
    _write_run_record(out, "sweep-k", resolved)
    return 0


def cmd_neg_study(args) -> int:
    defaults = {"corpus": None, "questions": None, "student": None, "index": None,
                "variants": "random:23,retrieved:23,retrieved:67",
                "k": "1,2,5,10,20,50", "seed": 0, "epochs": 4,
                "learning_rate": 1e-3, "out_dir": "out"}
    resolved = _resolve(args, defaults)
    out = _out_dir(resolved)
    corpus = corpus_mod.load_corpus(resolved["corpus"])
    questions = corpus_mod.load_questions(resolved["questions"])
    student = encoder.load_student(resolved["student"])
    idx = index_mod.deserialize(resolved["index"])
    variants = []
    for item in resolved["variants"].split(","):
        source, _, count = item.partition(":")
        variants.append({"source": source.strip(), "n_negatives": int(count)})
    cfg = _train_config(resolved, kd_weight=0.0, contrastive_weight=1.0,
                        warmup_steps=resolved.get("warmup_steps", 20))
    ks = [k for k in _parse_k_list(resolved["k"]) if k <= len(corpus)]
    report = evaluation.negative_sampling_study(corpus, questions, idx, student,
                                                variants, cfg, ks)
    for name, curve in report.items():
        (out / f"neg_study_{name}.txt").write_text(
            evaluation.format_curve(curve, resolved["seed"], name), encoding="utf-8")
    _write_run_record(out, "neg-study", resolved)
    return 0


def cmd_ablate(args) -> int:
    defaults = {"passages": 2000, "questions": 200, "latent_dim": 8, "seed": 3,
                "epochs": 8, "learning_rate": 1e-3, "warmup_steps": 50,
                "k": "1,20,50,100", "out_dir": "out"}
    resolved = _resolve(args, defaults)
    out = _out_dir(resolved)
    cfg = _train_config(resolved)
    result = evaluation.ablate_distillation(
        resolved["passages"], resolved["questions"], resolved["latent_dim"],
        resolved["seed"], cfg, k_values=_parse_k_list(resolved["k"]))
    for arm in ("kd", "contrastive"):
        (out / f"ablate_{arm}.txt").write_text(
            evaluation.format_recall_report(result[arm], resolved["seed"], arm),
            encoding="utf-8")
    delta_lines = [f"metric=recall_delta k={k} value={d:.2f} n={result['kd'].n_questions} "
                   f"seed={resolved['seed']} variant=kd-minus-contrastive"
                   for k, d in zip(result["k_values"], result["deltas"])]
    (out / "ablate_deltas.txt").write_text("\n".join(delta_lines) + "\n", encoding="utf-8")
    _write_run_record(out, "ablate", resolved)
    return 0


def cmd_bench_index(args) -> int:
    defaults = {"index": None, "student": None, "questions": None,
                "flat_reference": None, "k": "1,10,100", "seed": 0,
                "out_dir": "out"}
    resolved = _resolve(args, defaults)
    out = _out_dir(resolved)
    idx = index_mod.deserialize(resolved["index"])
    student = encoder.load_student(resolved["student"])
    questions = corpus_mod.load_questions(resolved["questions"])
    queries = [student.embed_question(q) for q in questions]
    flat_ref = (index_mod.deserialize(resolved["flat_reference"])
                if resolved["flat_reference"] else None)
    rows = index_mod.bench_search(idx, queries, _parse_k_list(resolved["k"]), flat_ref)
    (out / "bench_table.txt").write_text(
        index_mod.format_bench_table(rows, idx.variant), encoding="utf-8")
    _write_run_record(out, "bench-index", resolved)
    return 0


def cmd_finetune_reader(args) -> int:
    defaults = {"reader": None, "student": None, "index": None, "corpus": None,
                "questions": None, "k": 16, "seed": 0, "epochs": 4,
                "learning_rate": 1e-3, "out_dir": "out"}
    resolved = _resolve(args, defaults)
    out = _out_dir(resolved)
    reader = encoder.load_reader(resolved["reader"])
    student = encoder.load_student(resolved["student"])
    idx = index_mod.deserialize(resolved["index"])
    corpus = corpus_mod.load_corpus(resolved["corpus"])
    questions = corpus_mod.load_questions(resolved["questions"])
    cfg = _train_config(resolved, kd_weight=0.0, contrastive_weight=1.0,
                        warmup_steps=resolved.get("warmup_steps", 20))
    reader, report = evaluation.finetune_reader_after_swap(
        reader, student, idx, corpus, questions, resolved["k"], cfg)
    encoder.save_reader(reader, out / "reader_finetuned.ckpt")
    (out / "finetune_report.txt").write_text(
        f"accuracy_before={report['accuracy_before']:.6f}\n"
        f"accuracy_after={report['accuracy_after']:.6f}\n"
        f"delta={report['delta']:.6f}\n", encoding="utf-8")
    _write_run_record(out, "finetune-reader", resolved)
    return 0


# --- argument parsing ----------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--config", type=str, default=None)
    sp.add_argument("--out-dir", dest="out_dir", type=str, default=None)
    sp.add_argument("--workers", type=int, default=None,
                    help="reserved; default 1 keeps runs bit-exact")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdretrieval")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-corpus", help="generate a synthetic corpus with planted golds")
    sp.add_argument("--passages", type=int)
    sp.add_argument("--questions", type=int)
    sp.add_argument("--latent-dim", dest="latent_dim", type=int)
    _add_common(sp)
    sp.set_defaults(func=cmd_gen_corpus)

    sp = sub.add_parser("pretrain", help="contrastive pretraining of the student")
    sp.add_argument("--corpus")
    sp.add_argument("--questions")
    for flag in ("epochs", "warmup-steps", "batch-size", "d-in", "hidden", "d-emb"):
        sp.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=int)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float)
    _add_common(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("distill", help="KD finetuning from a teacher")
    sp.add_argument("--corpus")
    sp.add_argument("--questions")
    sp.add_argument("--teacher")
    sp.add_argument("--student")
    for flag in ("epochs", "warmup-steps", "batch-size", "passages-per-question"):
        sp.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=int)
    for flag in ("temperature", "kd-weight", "contrastive-weight", "learning-rate",
                 "validation-fraction"):
        sp.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=float)
    _add_common(sp)
    sp.set_defaults(func=cmd_distill)

    sp = sub.add_parser("build-index", help="build a MIPS index over passage embeddings")
    sp.add_argument("--corpus")
    sp.add_argument("--student")
    sp.add_argument("--variant", choices=["flat", "graph", "sq8"])
    sp.add_argument("--neighbors", type=int)
    sp.add_argument("--construction-depth", dest="construction_depth", type=int)
    sp.add_argument("--search-depth", dest="search_depth", type=int)
    _add_common(sp)
    sp.set_defaults(func=cmd_build_index)

    sp = sub.add_parser("search", help="query an index")
    sp.add_argument("--index")
    sp.add_argument("--student")
    sp.add_argument("--query")
    sp.add_argument("--k", type=int)
    _add_common(sp)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("eval-recall", help="recall@k of an index + student")
    sp.add_argument("--index")
    sp.add_argument("--student")
    sp.add_argument("--corpus")
    sp.add_argument("--questions")
    sp.add_argument("--k")
    _add_common(sp)
    sp.set_defaults(func=cmd_eval_recall)

    sp = sub.add_parser("sweep-k", help="end-to-end accuracy across k")
    sp.add_argument("--index")
    sp.add_argument("--student")
    sp.add_argument("--teacher")
    sp.add_argument("--corpus")
    sp.add_argument("--questions")
    sp.add_argument("--k")
    _add_common(sp)
    sp.set_defaults(func=cmd_sweep_k)

    sp = sub.add_parser("neg-study", help="negative sampling study for the joint reader")
    sp.add_argument("--corpus")
    sp.add_argument("--questions")
    sp.add_argument("--student")
    sp.add_argument("--index")
    sp.add_argument("--variants")
    sp.add_argument("--k")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float)
    _add_common(sp)
    sp.set_defaults(func=cmd_neg_study)

    sp = sub.add_parser("ablate", help="KD vs contrastive-only ablation")
    sp.add_argument("--passages", type=int)
    sp.add_argument("--questions", type=int)
    sp.add_argument("--latent-dim", dest="latent_dim", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float)
    sp.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    sp.add_argument("--k")
    _add_common(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("bench-index", help="search latency and recall-vs-flat table")
    sp.add_argument("--index")
    sp.add_argument("--student")
    sp.add_argument("--questions")
    sp.add_argument("--flat-reference", dest="flat_reference")
    sp.add_argument("--k")
    _add_common(sp)
    sp.set_defaults(func=cmd_bench_index)

    sp = sub.add_parser("finetune-reader", help="finetune a reader on a swapped retriever")
    sp.add_argument("--reader")
    sp.add_argument("--student")
    sp.add_argument("--index")
    sp.add_argument("--corpus")
    sp.add_argument("--questions")
    sp.add_argument("--k", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float)
    _add_common(sp)
    sp.set_defaults(func=cmd_finetune_reader)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (KdrError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
