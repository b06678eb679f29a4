"""Command-line surface: training, evaluation, and verification tools.

Subcommands: train-align, train-classify, eval, verify-reductions,
gradcheck, metrics-report.  Each prints a human-readable table to
standard output and can write a machine-readable `key<TAB>value` report
file.  Exit codes: 0 success, 1 validation problem, 2 internal error.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import io as io_mod
from .checks import (END_TO_END_TASKS, end_to_end_gradient_fd,
                     reduction_discrepancy, scorer_gradient_fd)
from .metrics import hits_at_k, mrr
from .propagation import REDUCTION_MODES, model_forward
from .scorers import SCORERS, base_dim, make_scorer
from .tasks import (evaluate_alignment, evaluate_classification,
                    train_alignment, train_classification,
                    zero_shot_relation_alignment)

_TRAIN_KEYS = ("graph1", "graph2", "train", "valid", "test", "rel_test",
               "report", "checkpoint", "mode", "scorer", "dim", "layers", "lr",
               "alpha", "gamma", "negatives", "epochs", "patience", "seed", "runs")


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key = value configuration file")
    for key in _TRAIN_KEYS:
        sub.add_argument(f"--{key.replace('_', '-')}", dest=key)
    sub.add_argument("--quiet", action="store_true",
                     help="suppress per-epoch progress lines")


def _overrides(args: argparse.Namespace) -> dict:
    return {k: getattr(args, k) for k in _TRAIN_KEYS if getattr(args, k, None) is not None}


def _progress_printer(quiet: bool, every: int = 50):
    if quiet:
        return None

    def progress(epoch, loss, metric):
        if epoch % every == 0:
            tail = "" if metric is None else f"  valid {metric:.4f}"
            print(f"epoch {epoch:4d}  loss {loss:.6f}{tail}", flush=True)

    return progress


def _aggregate(per_run: list, seed: int) -> dict:
    out = {"seed": seed}
    for key in sorted(per_run[0]):
        vals = [m[key] for m in per_run]
        out[key] = float(np.mean(vals))
        if len(vals) > 1:
            out[key + "_std"] = float(np.std(vals))
    return out


def _emit(report: dict, runtime: float, report_path) -> None:
    for key in sorted(report):
        print(f"{key:16s} {io_mod.format_value(report[key])}")
    print(f"{'runtime_seconds':16s} {runtime:.2f}")
    if report_path:
        io_mod.write_report(report_path, report)
        print(f"report written to {report_path}")


def cmd_train_align(args: argparse.Namespace) -> int:
    overrides = _overrides(args)
    overrides["task"] = "align"
    values = io_mod.parse_config(args.config, overrides)
    bundle = io_mod.load_alignment_bundle(values)
    g1, g2 = bundle.graphs
    eval_pairs = bundle.seeds.test or bundle.seeds.valid or bundle.seeds.train
    t0 = time.perf_counter()
    per_run = []
    last = None
    for run in range(values["runs"]):
        cfg = io_mod.train_config(values)
        cfg.seed = values["seed"] + run
        res = train_alignment(g1, g2, bundle.seeds, cfg,
                              progress=_progress_printer(args.quiet))
        metrics = evaluate_alignment(res.state1, res.state2, eval_pairs)
        if values.get("rel_test"):
            rel_pairs = io_mod.load_alignments(values["rel_test"],
                                               bundle.relation_vocabs[0],
                                               bundle.relation_vocabs[1])
            rel = zero_shot_relation_alignment(res.state1, res.state2, rel_pairs)
            metrics["relation_mrr"] = rel["mrr"]
            metrics["relation_hits1"] = rel["hits1"]
        per_run.append(metrics)
        last = res
    report = _aggregate(per_run, values["seed"])
    if values.get("checkpoint"):
        cp = io_mod.pack_model(values, last.params,
                               {"g1": last.init1, "g2": last.init2},
                               last.best_valid_hits1)
        io_mod.save_checkpoint(values["checkpoint"], cp)
        print(f"checkpoint written to {values['checkpoint']}")
    _emit(report, time.perf_counter() - t0, values.get("report"))
    return 0


def cmd_train_classify(args: argparse.Namespace) -> int:
    overrides = _overrides(args)
    overrides["task"] = "classify"
    values = io_mod.parse_config(args.config, overrides)
    bundle = io_mod.load_classification_bundle(values)
    g = bundle.graphs[0]
    label_set = bundle.label_set
    eval_ids = label_set.test or label_set.valid or label_set.train
    t0 = time.perf_counter()
    per_run = []
    last = None
    for run in range(values["runs"]):
        cfg = io_mod.train_config(values)
        cfg.seed = values["seed"] + run
        res = train_classification(g, label_set, cfg,
                                   progress=_progress_printer(args.quiet))
        per_run.append(evaluate_classification(res.scores, label_set, eval_ids))
        last = res
    report = _aggregate(per_run, values["seed"])
    if values.get("checkpoint"):
        cp = io_mod.pack_model(values, last.params, {"g": last.init},
                               last.best_valid_metric)
        io_mod.save_checkpoint(values["checkpoint"], cp)
        print(f"checkpoint written to {values['checkpoint']}")
    _emit(report, time.perf_counter() - t0, values.get("report"))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cp = io_mod.load_checkpoint(args.checkpoint)
    values, params_list, tables, _ = io_mod.unpack_model(cp)
    for key in ("graph1", "graph2", "train", "valid", "test", "report"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    scorer = (make_scorer(values["scorer"], base_dim(values["scorer"], values["dim"]))
              if values["mode"] == "kegcn" else None)
    t0 = time.perf_counter()
    if values["task"] == "align":
        bundle = io_mod.load_alignment_bundle(values)
        g1, g2 = bundle.graphs
        for gname, g in (("g1", g1), ("g2", g2)):
            if tables[gname].entity.shape[0] != g.num_entities:
                raise io_mod.DataError(
                    f"checkpoint table {gname} covers {tables[gname].entity.shape[0]} "
                    f"entities but the graph has {g.num_entities}")
        s1 = model_forward(g1, tables["g1"], params_list, mode=values["mode"], scorer=scorer)
        s2 = model_forward(g2, tables["g2"], params_list, mode=values["mode"], scorer=scorer)
        pairs = bundle.seeds.test or bundle.seeds.valid or bundle.seeds.train
        if not pairs:
            raise io_mod.DataError("no seed pairs to evaluate")
        metrics = evaluate_alignment(s1, s2, pairs)
    else:
        bundle = io_mod.load_classification_bundle(values)
        g = bundle.graphs[0]
        label_set = bundle.label_set
        if tables["g"].entity.shape[0] != g.num_entities:
            raise io_mod.DataError(
                f"checkpoint covers {tables['g'].entity.shape[0]} entities "
                f"but the graph has {g.num_entities}")
        final = model_forward(g, tables["g"], params_list, mode=values["mode"], scorer=scorer)
        if final.entity.shape[1] != label_set.num_classes:
            raise io_mod.DataError(
                f"checkpoint predicts {final.entity.shape[1]} classes but the "
                f"label files define {label_set.num_classes}")
        from .tasks import _scores_from_logits

        scores = _scores_from_logits(final.entity, label_set.multi_label)
        ids = label_set.test or label_set.valid or label_set.train
        if not ids:
            raise io_mod.DataError("no labeled entities to evaluate")
        metrics = evaluate_classification(scores, label_set, ids)
    report = dict(metrics)
    report["seed"] = values["seed"]
    _emit(report, time.perf_counter() - t0, values.get("report"))
    return 0


def cmd_verify_reductions(args: argparse.Namespace) -> int:
    base = args.seed
    worst_all = 0.0
    for mode in REDUCTION_MODES:
        worst = max(reduction_discrepancy(mode, base + i) for i in range(args.runs))
        worst_all = max(worst_all, worst)
        print(f"{mode:13s} max discrepancy {worst:.3e}")
    ok = worst_all <= 1e-9
    print(f"overall {'PASS' if ok else 'FAIL'} (threshold 1e-9)")
    return 0 if ok else 1


def cmd_gradcheck(args: argparse.Namespace) -> int:
    kinds = sorted(SCORERS) if args.scorer == "all" else [args.scorer]
    worst = 0.0
    for kind in kinds:
        err = scorer_gradient_fd(kind, n_points=args.points)
        worst = max(worst, err)
        print(f"scorer {kind:9s} closed-form fd error {err:.3e}")
    for kind in kinds:
        for task in END_TO_END_TASKS:
            err = end_to_end_gradient_fd(task, kind, max_coords=20)
            worst = max(worst, err)
            print(f"end-to-end {task:10s} {kind:9s} fd error {err:.3e}")
    ok = worst <= 1e-4
    print(f"worst {worst:.3e} {'PASS' if ok else 'FAIL'} (threshold 1e-4)")
    return 0 if ok else 1


def cmd_metrics_report(args: argparse.Namespace) -> int:
    ranks = []
    with open(args.ranks, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rank = int(line)
            except ValueError:
                raise io_mod.DataError(
                    f"{args.ranks} line {lineno}: expected an integer rank") from None
            if rank < 1:
                raise io_mod.DataError(
                    f"{args.ranks} line {lineno}: ranks are 1-based")
            ranks.append(rank)
    report = {"mrr": mrr(ranks), "hits1": hits_at_k(ranks, 1),
              "hits10": hits_at_k(ranks, 10)}
    t0 = time.perf_counter()
    _emit(report, time.perf_counter() - t0, args.report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kegcn",
        description="Knowledge graph convolution with score-gradient messages")
    subs = parser.add_subparsers(dest="command")

    p = subs.add_parser("train-align", help="train a cross-graph entity aligner")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_align)

    p = subs.add_parser("train-classify", help="train an entity classifier")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_classify)

    p = subs.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    for key in ("graph1", "graph2", "train", "valid", "test", "report"):
        p.add_argument(f"--{key}")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("verify-reductions",
                        help="check the generic layer against printed baselines")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1)
    p.set_defaults(func=cmd_verify_reductions)

    p = subs.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scorer", choices=sorted(SCORERS) + ["all"], default="all")
    p.add_argument("--points", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)

    p = subs.add_parser("metrics-report", help="ranking metrics from a rank list")
    p.add_argument("--ranks", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_metrics_report)

    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else 1
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 1
    try:
        io_mod.thread_cap()
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
