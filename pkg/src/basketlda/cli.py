"""Command-line front end: ``basketlda <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal
error. Relative paths resolve against ``$BASKETLDA_DATA_DIR`` when it is set.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, corpus as corpus_mod, generator, inference, metrics, survey
from ._io import file_sha256

DATA_DIR_ENV = "BASKETLDA_DATA_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _path(p):
    if p is None:
        return None
    p = Path(p)
    base = os.environ.get(DATA_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _sibling(path, tag):
    path = Path(path)
    return path.with_name(f"{path.stem}.{tag}{path.suffix}")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _json_arg(text):
    """Inline JSON, or ``@path`` to read it from a file."""
    if text is None:
        return None
    if text.startswith("@"):
        with open(_path(text[1:]), encoding="utf-8") as fh:
            return json.load(fh)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid JSON argument: {exc.msg}") from None


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"missing required option(s): {flags}")


def _write_config(args, out):
    """Record the resolved arguments next to ``out``."""
    resolved = {k: (str(v) if isinstance(v, Path) else v)
                for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    with open(Path(str(out) + ".config.json"), "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _train_config(args, K, seed):
    return inference.TrainConfig(
        K=K, alpha=args.alpha, beta=args.beta, max_epochs=args.max_epochs,
        minibatch_size=args.minibatch, learning_offset=args.tau0, decay=args.kappa,
        seed=seed, convergence_tol=args.tol, init=args.init)


# -- commands ----------------------------------------------------------------------

def cmd_ingest(args):
    _require(args, "input", "out")
    raw = corpus_mod.load_transactions(_path(args.input), args.format)
    filt = corpus_mod.FilterConfig(args.min_units, args.min_basket)
    corpus = corpus_mod.build_corpus(raw, filt)
    out = _path(args.out)
    corpus.save(out)
    print(f"D={corpus.D} V={corpus.V} tokens={corpus.num_tokens()}")
    print(f"{out}  sha256={file_sha256(out)}")
    if args.holdout is not None:
        train, test = corpus_mod.split_corpus(corpus, args.holdout, args.seed)
        for tag, part in (("train", train), ("test", test)):
            p = _sibling(out, tag)
            part.save(p)
            print(f"{p}  D={part.D}  sha256={file_sha256(p)}")
    _write_config(args, out)


def cmd_simulate(args):
    _require(args, "k", "v", "d", "out")
    corpus, truth = generator.simulate(args.k, args.v, args.d, args.alpha, args.beta,
                                       args.mean_basket, args.seed)
    seasonal = _json_arg(args.seasonal)
    weekday = _json_arg(args.weekday)
    groups = _json_arg(args.groups)
    labels = {}
    if seasonal is not None or weekday is not None or groups:
        corpus, truth, labels = generator.inject_covariates(
            corpus, truth, seasonal=seasonal, groups=groups, seed=args.seed + 1,
            weekday=weekday, baskets_per_customer=args.baskets_per_customer)
    out = _path(args.out)
    truth_path = _path(args.truth) or _sibling(out, "truth")
    corpus.save(out)
    truth.save(truth_path)
    print(f"D={corpus.D} V={corpus.V} tokens={corpus.num_tokens()}")
    print(f"{out}  sha256={file_sha256(out)}")
    print(f"{truth_path}  sha256={file_sha256(truth_path)}")
    if labels:
        side = _path(args.demographics) or out.with_name(out.stem + ".groups.csv")
        generator.write_group_labels(side, labels)
        print(f"{side}  customers={len(labels)}")
    _write_config(args, out)


def cmd_train(args):
    _require(args, "corpus", "k", "out")
    corpus = corpus_mod.BasketCorpus.load(_path(args.corpus))
    cfg = _train_config(args, args.k, args.seed)
    if args.method == "gibbs":
        model = inference.train_gibbs(corpus, cfg, args.burn_in, args.samples)
    else:
        model = inference.train_online_vb(corpus, cfg)
    out = _path(args.out)
    model.save(out)
    print(f"K={model.K} V={model.V} method={model.method} epochs={model.trace.size} "
          f"train_log_perplexity={model.trace[-1]:.6f}")
    print(f"{out}  sha256={file_sha256(out)}")
    _write_config(args, out)


def cmd_eval(args):
    _require(args, "corpus", "k", "out")
    corpus = corpus_mod.BasketCorpus.load(_path(args.corpus))
    if args.test is not None:
        train, test = corpus, corpus_mod.BasketCorpus.load(_path(args.test))
    else:
        train, test = corpus_mod.split_corpus(corpus, args.holdout, args.seed)
    configs = [_train_config(args, K, args.seed) for K in args.k]
    rows = metrics.perplexity_sweep(train, test, configs, seed=args.seed, scheme=args.scheme)
    out = _path(args.out)
    best = metrics.write_sweep_csv(out, rows)
    print(f"{'K':>5} {'train':>12} {'test':>12}")
    for i, (K, tr, te) in enumerate(rows):
        print(f"{K:>5} {tr:>12.6f} {te:>12.6f}{'  *' if i == best else ''}")
    _write_config(args, out)


def cmd_topics(args):
    _require(args, "model")
    model = inference.TopicModel.load(_path(args.model))
    corpus = corpus_mod.BasketCorpus.load(_path(args.corpus)) if args.corpus else None
    sizes = metrics.topic_sizes(model)
    print(f"{'topic':>5} {'size':>7}")
    for k, s in enumerate(sizes):
        print(f"{k:>5} {100 * s:>6.1f}%")
    if args.out:
        out = _path(args.out)
        metrics.relevance_table(model, corpus, args.lam).to_csv(out, args.top)
        _write_config(args, out)


def cmd_rank(args):
    _require(args, "model", "topic")
    model = inference.TopicModel.load(_path(args.model))
    corpus = corpus_mod.BasketCorpus.load(_path(args.corpus)) if args.corpus else None
    table = metrics.relevance_table(model, corpus, args.lam)
    if not 0 <= args.topic < model.K:
        raise ValueError(f"topic {args.topic} out of range for K={model.K}")
    if args.top < 1:
        raise ValueError("--top must be at least 1")
    print(f"{'rank':>4}  {'product_id':<16} {'p_wk':>10} {'lift':>10} {'relevance':>10}")
    for rank, w in enumerate(table.ranking(args.topic, args.top), start=1):
        print(f"{rank:>4}  {table.products[w]:<16} {table.p_wk[args.topic, w]:>10.6f} "
              f"{table.lift[args.topic, w]:>10.4f} {table.relevance[args.topic, w]:>10.4f}")
    if args.out:
        out = _path(args.out)
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write("topic,rank,product_id,p_wk,p_w,lift,relevance\n")
            for rank, w in enumerate(table.ranking(args.topic, args.top), start=1):
                fh.write(f"{args.topic},{rank},{table.products[w]},{float(table.p_wk[args.topic, w])!r},"
                         f"{float(table.p_w[w])!r},{float(table.lift[args.topic, w])!r},"
                         f"{float(table.relevance[args.topic, w])!r}\n")
        _write_config(args, out)


def cmd_seasonal(args):
    _require(args, "model", "corpus", "out")
    model = inference.TopicModel.load(_path(args.model))
    corpus = corpus_mod.BasketCorpus.load(_path(args.corpus))
    labeling = analysis.label_baskets(model, corpus)
    index = analysis.prevalence_index(labeling, args.period)
    out = _path(args.out)
    index.to_csv(out)
    print("topic " + " ".join(f"{p:>6}" for p in index.periods))
    for k in range(model.K):
        print(f"{k:>5} " + " ".join(f"{v:>6.2f}" for v in index.index[k]))
    _write_config(args, out)


def cmd_predict(args):
    _require(args, "model", "corpus", "labels", "out")
    model = inference.TopicModel.load(_path(args.model))
    corpus = corpus_mod.BasketCorpus.load(_path(args.corpus))
    feats = analysis.customer_features(model, corpus)
    labels = analysis.read_demographics(_path(args.labels), args.task)
    demo = analysis.fit_demographic_model(feats, labels, args.task, args.grid, args.folds, args.seed)
    out = _path(args.out)
    demo.to_json(out)
    mean = demo.cv["mean"]
    line = f"task={args.task} lambda={demo.lambda_reg} accuracy={mean['accuracy']:.4f}"
    if "auc" in mean:
        line += f" auc={mean['auc']:.4f}"
    print(line + f" baseline={demo.cv['baseline']['mean']:.4f}")
    if args.predictions:
        pred = analysis.predict_demographics(demo, feats)
        with open(_path(args.predictions), "w", encoding="utf-8", newline="") as fh:
            fh.write("customer_id,predicted," + ",".join(f"p_{c}" for c in demo.classes) + "\n")
            for cid, lab, p in zip(pred.customer_ids, pred.labels, pred.proba):
                fh.write(f"{cid},{lab}," + ",".join(repr(float(x)) for x in p) + "\n")
    _write_config(args, out)


def cmd_survey_generate(args):
    _require(args, "model", "out")
    model = inference.TopicModel.load(_path(args.model))
    corpus = corpus_mod.BasketCorpus.load(_path(args.corpus)) if args.corpus else None
    topics = args.topics if args.topics else list(range(model.K))
    tasks = []
    if args.type == "label":
        _require(args, "topic_labels")
        with open(_path(args.topic_labels), encoding="utf-8") as fh:
            names = [line.strip() for line in fh if line.strip()]
        for i, k in enumerate(topics):
            tasks.append(survey.gen_label_task(model, corpus, names, k, args.seed + i, topics))
    else:
        for i, k in enumerate(topics):
            tasks.append(survey.gen_intruder_task(model, corpus, k, args.seed + i, topics))
    out = _path(args.out)
    survey.tasks_to_json(out, tasks)
    chance = survey.LABEL_CHANCE if args.type == "label" else survey.INTRUDER_CHANCE
    print(f"{len(tasks)} {args.type} tasks, chance {survey.format_chance(chance)}")
    _write_config(args, out)


def cmd_survey_score(args):
    _require(args, "tasks", "responses", "out")
    tasks = survey.load_tasks(_path(args.tasks))
    responses = survey.read_responses(_path(args.responses))
    sheet = survey.score_responses(tasks, responses)
    out = _path(args.out)
    sheet.to_csv(out)
    for kind, s in sheet.overall.items():
        print(f"{kind}: {100 * s.proportion:.1f}% correct (n={s.n}, chance "
              f"{survey.format_chance(s.chance)}, p={s.p_value:.3g})")
    _write_config(args, out)


def cmd_align(args):
    _require(args, "truth", "model")
    truth = generator.GroundTruth.load(_path(args.truth))
    model = inference.TopicModel.load(_path(args.model))
    perm, tv = metrics.match_topics(truth.phi, model.phi)
    print(f"mean_tv={tv:.6f}")
    print("permutation=" + ",".join(str(int(p)) for p in perm))


# -- parser --------------------------------------------------------------------------

def _add_training(p):
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=None, help="topic prior (default 1/K)")
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--minibatch", type=int, default=4096)
    p.add_argument("--tau0", type=float, default=1024.0)
    p.add_argument("--kappa", type=float, default=0.51)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--init", choices=("seeded", "random"), default="seeded")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="basketlda", description="Topic models for shopping baskets.")
    parser.add_argument("--config", help="JSON file of option values (keys as long option names)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="build a filtered corpus from transactions")
    p.add_argument("--input")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--min-units", type=int, default=50_000)
    p.add_argument("--min-basket", type=int, default=20)
    p.add_argument("--holdout", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", help="sample a synthetic corpus with ground truth")
    p.add_argument("--k", type=int)
    p.add_argument("--v", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--mean-basket", type=float, default=25.0)
    p.add_argument("--seasonal", help="JSON {topic: 12 month multipliers} or @file")
    p.add_argument("--weekday", help="JSON {topic: 7 weekday multipliers} or @file")
    p.add_argument("--groups", help="JSON {group label: K alphas} or @file")
    p.add_argument("--baskets-per-customer", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--truth")
    p.add_argument("--demographics")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit a topic model")
    p.add_argument("--corpus")
    p.add_argument("--k", type=int)
    _add_training(p)
    p.add_argument("--method", choices=("vb", "gibbs"), default="vb")
    p.add_argument("--burn-in", type=int, default=200)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out log-perplexity sweep over K")
    p.add_argument("--corpus")
    p.add_argument("--test", help="held-out corpus (default: split --corpus)")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--k", type=_int_list)
    p.add_argument("--scheme", choices=("completion", "full"), default="completion",
                   help="held-out scoring: half-basket completion or full-basket fold-in")
    _add_training(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("topics", help="topic sizes and relevance tables")
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--lambda", dest="lam", type=float, default=metrics.DEFAULT_LAMBDA)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("rank", help="rank products within a topic by relevance")
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--topic", type=int)
    p.add_argument("--lambda", dest="lam", type=float, default=metrics.DEFAULT_LAMBDA)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("seasonal", help="monthly or weekday topic prevalence index")
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--period", choices=("month", "weekday"), default="month")
    p.add_argument("--out")
    p.set_defaults(func=cmd_seasonal)

    p = sub.add_parser("predict", help="cross-validated demographic prediction")
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--labels")
    p.add_argument("--task", choices=sorted(analysis.TASKS), default="age")
    p.add_argument("--grid", type=_float_list, default=list(analysis.DEFAULT_GRID))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--predictions")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("survey", help="generate or score validation tasks")
    ssub = p.add_subparsers(dest="action", parser_class=_Parser)
    g = ssub.add_parser("generate")
    g.add_argument("--model")
    g.add_argument("--corpus")
    g.add_argument("--type", choices=("label", "intruder"), default="intruder")
    g.add_argument("--topics", type=_int_list)
    g.add_argument("--topic-labels", help="text file, one label per topic")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_survey_generate)
    s = ssub.add_parser("score")
    s.add_argument("--tasks")
    s.add_argument("--responses")
    s.add_argument("--out")
    s.set_defaults(func=cmd_survey_score)

    p = sub.add_parser("align", help="match fitted topics to ground truth")
    p.add_argument("--truth")
    p.add_argument("--model")
    p.set_defaults(func=cmd_align)
    return parser


def _leaf_parser(parser, argv):
    """The subparser that will handle ``argv`` (for --config validation)."""
    node = parser
    for tok in argv:
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if actions and tok in actions[0].choices:
            node = actions[0].choices[tok]
    return node


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        raise UsageError("a command is required")
    if args.config:
        with open(_path(args.config), encoding="utf-8") as fh:
            values = json.load(fh)
        leaf = _leaf_parser(parser, argv)
        known = {a.dest for a in leaf._actions} - {"help", "func"}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        leaf.set_defaults(**{k.replace("-", "_"): v for k, v in values.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
