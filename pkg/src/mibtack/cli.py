"""Command line interface.

Subcommands: gen-data (write a seeded SBM graph), train (graph to
checkpoint), attack (main attack to report), baseline (comparison attack
to report), analyze (report to plot-ready CSV tables), poison (retrain
on perturbed graphs and measure surviving accuracy).  Exit codes: 0 on
success, 1 on runtime failure with a diagnostic on stderr, 2 on usage
errors.
"""

import argparse
import os
import sys

import numpy as np

from .attack import AttackConfig, jaccard_mask
from .baselines import KINDS, BaselineConfig
from .graph import SbmParams, edge_pairs, generate_sbm, load_graph, save_graph
from .harness import (
    REPORT_FORMATS,
    ExperimentConfig,
    load_report,
    poison_eval,
    run_experiment,
    write_decile_table,
    write_degree_table,
    write_margin_table,
)
from .models import ARCHS, default_train_config, load_model, save_model, train


def build_parser():
    p = argparse.ArgumentParser(prog="mibtack",
                                description="minimum-budget topology attacks on GNNs")
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a seeded SBM graph file")
    gen.add_argument("--out", required=True, help="output graph path (canonical json)")
    gen.add_argument("--nodes", type=int, default=200)
    gen.add_argument("--blocks", type=int, default=4)
    gen.add_argument("--p-in", type=float, default=0.15)
    gen.add_argument("--p-out", type=float, default=0.01)
    gen.add_argument("--features", type=int, default=16)
    gen.add_argument("--feature-signal", type=float, default=0.5)
    gen.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="train a model and save a checkpoint")
    tr.add_argument("--graph", required=True)
    tr.add_argument("--model", choices=ARCHS, required=True)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True, help="checkpoint path (npz)")

    at = sub.add_parser("attack", help="run the minimum-budget attack")
    _common_attack_args(at)
    at.add_argument("--alpha", type=float, default=1.0, help="initial step size")
    at.add_argument("--beta", type=float, default=0.1, help="initial budget change rate")
    at.add_argument("--patience", type=int, default=800)
    at.add_argument("--gamma", type=float, default=0.0, help="required crossing margin")
    at.add_argument("--mask-jaccard", type=float, default=None, metavar="TAU",
                    help="restrict additions to feature-similar nodes")
    at.add_argument("--no-init", action="store_true",
                    help="start from a zero perturbation instead of the one-step guess")

    bl = sub.add_parser("baseline", help="run a comparison attack")
    _common_attack_args(bl)
    bl.add_argument("--kind", choices=KINDS, required=True)
    bl.add_argument("--flip-cap", type=int, default=1000)
    bl.add_argument("--pgd-iters", type=int, default=200)

    an = sub.add_parser("analyze", help="emit plot-ready CSV tables from a report")
    an.add_argument("--report", required=True)
    an.add_argument("--graph", required=True)
    an.add_argument("--out-dir", required=True)
    an.add_argument("--checkpoint", help="model checkpoint, enables the decile table")

    po = sub.add_parser("poison", help="retrain per perturbed graph, report accuracy")
    po.add_argument("--report", required=True)
    po.add_argument("--graph", required=True)
    po.add_argument("--model", choices=ARCHS, required=True)
    po.add_argument("--seed", type=int, default=0)
    po.add_argument("--max-poison-targets", type=int, default=None)

    return p


def _common_attack_args(sp):
    sp.add_argument("--graph", required=True)
    sp.add_argument("--model", choices=ARCHS, required=True)
    sp.add_argument("--checkpoint", help="reuse a trained checkpoint instead of training")
    sp.add_argument("--targets", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--only-correct", action="store_true",
                    help="sample targets among correctly classified test nodes")
    sp.add_argument("--out", required=True, help="report path")
    sp.add_argument("--format", choices=REPORT_FORMATS, default="json")


def _cmd_gen_data(args):
    params = SbmParams(
        num_nodes=args.nodes, num_blocks=args.blocks, p_in=args.p_in,
        p_out=args.p_out, num_features=args.features,
        feature_signal=args.feature_signal, seed=args.seed,
    )
    g = generate_sbm(params)
    save_graph(g, args.out)
    print(f"wrote {args.out}: {g.num_nodes} nodes, {len(edge_pairs(g))} edges, "
          f"{g.num_classes} classes")
    return 0


def _test_accuracy(model, g):
    from .models import predict_probs
    pred = predict_probs(model, g).argmax(axis=1) + 1
    test = g.splits.test
    return float(np.mean(pred[test] == g.labels[test]))


def _cmd_train(args):
    g = load_graph(args.graph)
    tc = default_train_config(args.model, seed=args.seed)
    model = train(args.model, g, tc)
    save_model(model, args.out)
    print(f"wrote {args.out}: {args.model}, test accuracy {_test_accuracy(model, g):.3f}")
    return 0


def _experiment_config(args, attack):
    return ExperimentConfig(
        arch=args.model, attack=attack, num_targets=args.targets, seed=args.seed,
        graph_path=args.graph, checkpoint=args.checkpoint,
        only_correct=args.only_correct, out_path=args.out, out_format=args.format,
    )


def _print_summary(report, out):
    s = report.summary
    print(f"wrote {out}: {s['num_success']}/{s['num_targets']} misclassified, "
          f"acc {s['acc']:.3f}, total budget {s['total_budget']}, "
          f"{report.runtime_seconds:.1f}s")
    return 0


def _cmd_attack(args):
    mask = None if args.mask_jaccard is None else jaccard_mask(args.mask_jaccard)
    attack = AttackConfig(
        alpha0=args.alpha, beta0=args.beta, patience=args.patience,
        gamma=args.gamma, seed=args.seed, candidate_mask=mask,
        init_mode="none" if args.no_init else "one-step",
    )
    return _print_summary(run_experiment(_experiment_config(args, attack)), args.out)


def _cmd_baseline(args):
    attack = BaselineConfig(kind=args.kind, flip_cap=args.flip_cap,
                            pgd_iters=args.pgd_iters, seed=args.seed)
    return _print_summary(run_experiment(_experiment_config(args, attack)), args.out)


def _cmd_analyze(args):
    report = load_report(args.report)
    g = load_graph(args.graph)
    os.makedirs(args.out_dir, exist_ok=True)
    degree_path = os.path.join(args.out_dir, "degree.csv")
    slope, intercept = write_degree_table(degree_path, report.records, g)
    margin_path = os.path.join(args.out_dir, "margins.csv")
    write_margin_table(margin_path, report.records)
    if slope is None:
        print(f"wrote {degree_path}: slope undefined (all degrees equal)")
    else:
        print(f"wrote {degree_path}: slope {slope:.4f}, intercept {intercept:.4f}")
    print(f"wrote {margin_path}")
    if args.checkpoint:
        model = load_model(args.checkpoint)
        decile_path = os.path.join(args.out_dir, "deciles.csv")
        write_decile_table(decile_path, report.records, model, g)
        print(f"wrote {decile_path}")
    return 0


def _cmd_poison(args):
    report = load_report(args.report)
    g = load_graph(args.graph)
    tc = default_train_config(args.model, seed=args.seed)
    acc = poison_eval(g, report.records, args.model, tc,
                      max_targets=args.max_poison_targets)
    print("poisoned accuracy: n/a" if acc is None else f"poisoned accuracy: {acc:.3f}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "attack": _cmd_attack,
    "baseline": _cmd_baseline,
    "analyze": _cmd_analyze,
    "poison": _cmd_poison,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
