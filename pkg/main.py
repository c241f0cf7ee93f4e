'''
main.py
Command-line entry point of the tag-noise toolkit.
Each subcommand delegates to one module operation; see README.md for the
pipeline order and the result directory layout.
'''
import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from config import (
    TOOL_NAME,
    TOOL_VERSION,
    LOG_DIR,
    DEFAULT_LOG_LEVEL,
    TARGET_FRAMES,
    SPECTRUM_POWER,
    BOOTSTRAP_RESAMPLES,
    LEARNING_RATE,
    BATCH_SIZE,
    MAX_EPOCHS,
    PATIENCE,
    PRECISION,
    ARCH_PRESETS,
    OVERLAP_TOP_K,
    DEFAULT_ANNOTATOR,
    REFERENCE_TOTAL
)
from logger import initialize_logger, cleanup_logger, log_event, log_warning, log_error
from utils import (
    TagNoiseError,
    UndefinedStatisticError,
    TrainingDivergedError,
    new_seed,
    set_thread_count,
    set_command_line,
    write_table
)
from groundtruth.tagdata import (
    ingest_edge_list,
    assign_splits,
    audit_matrix,
    write_label_matrix,
    read_label_matrix,
    write_edge_list
)
from groundtruth.annotation import (
    sample_balanced_subset,
    sample_random_subset,
    write_annotations,
    read_annotations
)
from groundtruth.annotate import safe_annotate_session
from groundtruth.bootstrap import BootstrapConfig
from groundtruth.cooccur import compute_nco, top_pairs, subset_nco, write_nco_csv
from groundtruth.noise import (
    estimate_noise_rates,
    groundtruth_quality,
    estimate_prevalence,
    subset_prevalence,
    summarize_quality,
    inject_noise,
    read_noise_spec,
    reference_rates,
    quality_from_rates
)
from frontend.melspec import featurize_directory
from network.convnet import arch_preset
from network.train import TrainConfig, load_feature_set, train, predict, write_train_log
from network.checkpoint import save_checkpoint, load_checkpoint, extract_label_vectors
from analysis.metrics import (
    evaluate,
    write_eval_report,
    popularity_correlation,
    read_score_column,
    correlate,
    reliability_pair
)
from analysis.lvs import compute_lvs, rank_lvs_pairs, compare_lvs_nco, write_lvs_csv, write_lvs_npy, write_pairs, write_divergences
from analysis.experiments import experiment_preset, load_experiment_config, config_text, run_noise_sweep
from analysis.report import write_report, read_result, summary_rows


def _fmt(value, digits=4):
    return "" if value is None else f"{value:.{digits}f}"

def _delimiter(args):
    return "\t" if args.format == "tsv" else ","

def _resolve_seed(args):
    """--seed, or a fresh seed that is announced so the run can be repeated."""
    if args.seed is not None:
        return args.seed
    seed = new_seed()
    log_event(f"No --seed given; using generated seed {seed}")
    return seed

def _require_out(args, parser, what):
    if not args.out:
        parser.error(f"{args.command} needs --out ({what})")
    return Path(args.out)

def _emit(args, header, rows, seed=None, extra=None):
    """Table to --out when given, else to stdout."""
    delimiter = _delimiter(args)
    if args.out:
        write_table(args.out, header, rows, seed=seed, extra=extra, delimiter=delimiter)
        log_event(f"Wrote {args.out}")
        return
    print(delimiter.join(header))
    for row in rows:
        print(delimiter.join(str(value) for value in row))

def _bootstrap(args, seed):
    if not getattr(args, "ci", False):
        return None
    return BootstrapConfig(nResamples=args.resamples, seed=seed)

def _tags(text):
    return [tag.strip() for tag in text.split(",") if tag.strip()] if text else None

# ---- commands ---------------------------------------------------------------

def cmd_ingest(args, parser):
    out = _require_out(args, parser, "label matrix path")
    matrix = ingest_edge_list(args.edges, args.top_n)
    if args.splits:
        matrix = assign_splits(matrix, args.splits)
    write_label_matrix(matrix, out)
    if args.edges_out:
        write_edge_list(matrix, args.edges_out)

def cmd_audit(args, parser):
    summary = audit_matrix(read_label_matrix(args.matrix))
    for key, value in summary.items():
        if isinstance(value, dict):
            value = " ".join(f"{name}={count}" for name, count in value.items())
        elif isinstance(value, tuple):
            value = f"{value[0]} ({value[1]})"
        print(f"{key}: {value}")

def cmd_sample(args, parser):
    out = _require_out(args, parser, "subset TSV")
    if (args.tag is None) == (args.random is None):
        parser.error("sample needs exactly one of --tag (balanced) or --random N")
    seed = _resolve_seed(args)
    matrix = read_label_matrix(args.matrix)
    if args.tag is not None:
        subset = sample_balanced_subset(matrix, args.tag, args.per_class, args.split, seed, args.annotator)
    else:
        subset = sample_random_subset(matrix, args.random, args.split, seed, _tags(args.tags), args.annotator)
    write_annotations(subset, out, seed=seed)

def cmd_annotate(args, parser):
    out = _require_out(args, parser, "final annotation TSV")
    _, completed = safe_annotate_session(args.subset, out, audioDir=args.audio_dir, seed=args.seed)
    if not completed:
        log_event(f"Session not finished; rerun 'annotate {args.subset} --out {out}' to continue")

ESTIMATE_HEADER = [
    "tag", "p_pos", "p_neg", "precision", "precision_ci", "recall", "recall_ci",
    "n_plus", "estimate", "estimate_ci", "pct_of_total"
]


def _pct(value):
    return None if value is None else 100.0 * value

def _ci(pair, scale=1.0, digits=1):
    """'low;high' so the interval stays one field in either delimiter."""
    if pair is None or pair[0] is None:
        return ""
    return f"{scale * pair[0]:.{digits}f};{scale * pair[1]:.{digits}f}"

def _estimate_row(rates, quality, estimate):
    """One row: rates as fractions, precision and recall in percent, corrected count with its share of T."""
    return [
        rates.tag,
        _fmt(rates.pPos),
        _fmt(rates.pNeg),
        _fmt(_pct(quality.precision), 1),
        _ci(quality.precisionCi, 100.0),
        _fmt(_pct(quality.recall), 1),
        _ci(quality.recallCi, 100.0),
        estimate.nPlus,
        _fmt(estimate.estimate, 2),
        _ci((estimate.ciLow, estimate.ciHigh), digits=2),
        _fmt(estimate.pctOfTotal, 1),
    ]

def _estimate_reference(args):
    seed = _resolve_seed(args) if args.ci else None
    bootstrap = _bootstrap(args, seed)
    rows = []
    for rates, nPlus, total in reference_rates():
        quality = quality_from_rates(rates, bootstrap)
        estimate = estimate_prevalence(nPlus, total, rates, bootstrap)
        rows.append(_estimate_row(rates, quality, estimate))
    _emit(args, ESTIMATE_HEADER, rows, seed=seed, extra={"total": REFERENCE_TOTAL, "source": "bundled reference inputs"})

def cmd_estimate(args, parser):
    if args.reference:
        return _estimate_reference(args)
    if not args.matrix or not args.annotations:
        parser.error("estimate needs MATRIX and ANNOTATIONS, or --reference")

    seed = _resolve_seed(args) if args.ci else None
    bootstrap = _bootstrap(args, seed)
    matrix = read_label_matrix(args.matrix)
    annotations = read_annotations(args.annotations, matrix)
    total = args.total or matrix.nTracks
    randomSubset = annotations.subsetKind == "random"

    rows = []
    allRates = []
    qualities = []
    for tag in _tags(args.tags) or annotations.tags():
        try:
            rates = estimate_noise_rates(matrix, annotations, tag)
            quality = groundtruth_quality(matrix, annotations, tag, bootstrap)
            estimate = estimate_prevalence(matrix.n_plus(tag), total, rates, bootstrap)
        except UndefinedStatisticError as e:
            log_warning(f"'{tag}' skipped: {e}")
            continue
        allRates.append(rates)
        qualities.append(quality)
        row = _estimate_row(rates, quality, estimate)
        if randomSubset:
            row.append(_fmt(subset_prevalence(matrix, annotations, tag).share))
        rows.append(row)
    if not rows:
        raise UndefinedStatisticError("no tag had enough answered annotations")
    header = ESTIMATE_HEADER + (["subset_share"] if randomSubset else [])
    summary = summarize_quality(allRates, qualities)
    _emit(args, header, rows, seed=seed, extra={key: _fmt(value) for key, value in summary.items()})

def cmd_inject_noise(args, parser):
    out = _require_out(args, parser, "noisy label matrix path")
    spec = read_noise_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    noisy, report = inject_noise(read_label_matrix(args.matrix), spec)
    write_label_matrix(noisy, out, seed=spec.seed)
    if args.edges_out:
        write_edge_list(noisy, args.edges_out, seed=spec.seed)
    for tag, flips in report.flips.items():
        if flips.drops or flips.spurious:
            log_event(f"  {tag}: dropped {flips.drops}/{flips.positives}, spurious {flips.spurious}/{flips.negatives}")

def cmd_featurize(args, parser):
    out = _require_out(args, parser, "feature directory")
    featurize_directory(args.audio_dir, out, args.frames, args.power)

def _split_ids(matrix, split):
    return [matrix.trackIds[row] for row in np.flatnonzero(matrix.split_mask(split))]

def cmd_train(args, parser):
    out = _require_out(args, parser, "model directory")
    seed = _resolve_seed(args)
    matrix = read_label_matrix(args.matrix)
    trainSet = load_feature_set(args.features, _split_ids(matrix, "train"))
    validSet = load_feature_set(args.features, _split_ids(matrix, "valid"))
    arch = replace(arch_preset(args.arch, len(matrix.vocab)), inputShape=trainSet.values.shape[1:])
    config = TrainConfig(
        learningRate=args.lr,
        batchSize=args.batch_size,
        maxEpochs=args.epochs,
        patience=args.patience,
        seed=seed,
        precision=args.precision
    )
    initParams = load_checkpoint(args.init) if args.init else None
    out.mkdir(parents=True, exist_ok=True)
    try:
        params, trainLog = train(arch, config, trainSet, validSet, matrix, initParams)
    except TrainingDivergedError as e:
        if e.lastParams is not None:
            save_checkpoint(e.lastParams, out / "diverged.ccnn", seed=seed)
        if e.trainLog:
            write_train_log(e.trainLog, out / "train_log.csv", seed=seed, delimiter=_delimiter(args))
        raise
    save_checkpoint(params, out / "checkpoint.ccnn", seed=seed)
    write_train_log(trainLog, out / "train_log.csv", seed=seed, delimiter=_delimiter(args))

def cmd_evaluate(args, parser):
    params = load_checkpoint(args.checkpoint)
    matrix = read_label_matrix(args.matrix)
    if args.annotations:
        reference = read_annotations(args.annotations, matrix)
        trackIds = list(dict.fromkeys(record.trackId for record in reference.records))
        tags = _tags(args.tags) or reference.tags()
    else:
        reference = matrix
        trackIds = _split_ids(matrix, args.split)
        tags = _tags(args.tags)
    if not trackIds:
        raise TagNoiseError(f"no tracks to evaluate in split '{args.split}'")

    seed = _resolve_seed(args) if args.ci else None
    scores = predict(params, load_feature_set(args.features, trackIds))
    report = evaluate(scores, trackIds, params.tags, reference, tags, _bootstrap(args, seed))
    log_event(f"Macro AUC vs {report.source}: {_fmt(report.macroAuc)}")
    if args.popularity:
        correlation = popularity_correlation(report, matrix.vocab)
        log_event(f"Popularity rank vs AUC: spearman {_fmt(correlation.spearman)} over {correlation.n} tags")
    if args.out:
        write_eval_report(report, args.out, seed=seed, delimiter=_delimiter(args))
    else:
        print(_delimiter(args).join(["tag", "auc"]))
        for tag, value in zip(report.tags, report.aucs):
            print(_delimiter(args).join([tag, _fmt(value)]))
        print(_delimiter(args).join(["macro_auc", _fmt(report.macroAuc)]))

def cmd_lvs(args, parser):
    out = _require_out(args, parser, "output directory")
    params = load_checkpoint(args.checkpoint)
    sim = compute_lvs(extract_label_vectors(params, Path(args.checkpoint).name), cosine=args.cosine)
    out.mkdir(parents=True, exist_ok=True)
    write_lvs_csv(sim, out / "lvs.csv")
    write_lvs_npy(sim, out / "lvs.npy")
    write_pairs(rank_lvs_pairs(sim, args.k), out / "lvs_pairs.tsv")
    if args.matrix:
        nco = compute_nco(read_label_matrix(args.matrix), args.split)
        comparison = compare_lvs_nco(sim, nco, overlapK=args.k)
        write_divergences(comparison, out / "divergences.tsv")
        print(f"rank_correlation: {_fmt(comparison.correlation.pearson)}")
        print(f"top_{comparison.overlapK}_overlap: {comparison.overlap}")
        print(f"negative_pairs: {comparison.negativePairs}/{comparison.nPairs}")

def cmd_top_pairs(args, parser):
    nco = compute_nco(read_label_matrix(args.matrix), args.split)
    if args.tags:
        nco = subset_nco(nco, _tags(args.tags))
    if args.nco_out:
        write_nco_csv(nco, args.nco_out)
    pairs = top_pairs(nco, args.k)
    _emit(args, ["tag_i", "tag_j", "score"], [[a, b, f"{score:.6f}"] for a, b, score in pairs], extra={"split": nco.split})

def cmd_correlate(args, parser):
    if len(args.a) != len(args.b):
        parser.error("--a and --b need the same number of files")
    seriesA = [read_score_column(path, args.column) for path in args.a]
    seriesB = [read_score_column(path, args.column) for path in args.b]
    if len(args.a) == 1:
        keys = [key for key in seriesA[0] if key in seriesB[0]]
        if args.tags:
            keys = [key for key in keys if key in set(_tags(args.tags))]
        result = correlate([seriesA[0][k] for k in keys], [seriesB[0][k] for k in keys], args.a[0], args.b[0], aggregation="per_key")
    else:
        tags = _tags(args.tags)

        def mean_of(values):
            keys = tags or list(values)
            missing = [key for key in keys if key not in values]
            if missing:
                raise TagNoiseError(f"score file lacks {missing[:5]}")
            return float(np.mean([values[key] for key in keys]))

        result = reliability_pair(
            [mean_of(values) for values in seriesA],
            [mean_of(values) for values in seriesB],
            "a",
            "b",
            aggregation="mean_auc" if tags is None else f"mean_auc[{','.join(tags)}]"
        )
    _emit(
        args,
        ["statistic", "value"],
        [["pearson", _fmt(result.pearson)], ["spearman", _fmt(result.spearman)], ["n", result.n], ["aggregation", result.aggregation]]
    )

def cmd_experiment(args, parser):
    out = _require_out(args, parser, "result directory")
    if args.config:
        spec, arch, trainConfig = load_experiment_config(args.config)
    else:
        spec, arch, trainConfig = experiment_preset(args.preset)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
        trainConfig = replace(trainConfig, seed=args.seed)
    result = run_noise_sweep(spec, arch, trainConfig, config_text(spec, arch, trainConfig))
    write_report(result, out, delimiter=_delimiter(args))
    for name, value in summary_rows(result):
        print(f"{name}: {value}")

def cmd_report(args, parser):
    out = _require_out(args, parser, "result directory")
    result = read_result(args.result_dir)
    write_report(result, out, delimiter=_delimiter(args))
    for name, value in summary_rows(result):
        print(f"{name}: {value}")

# ---- parser -----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Seed for randomized steps (generated and logged when absent)")
    common.add_argument("--threads", type=int, default=1, help="Worker threads for featurize, bootstrap and evaluation")
    common.add_argument("--out", default=None, help="Output file or directory")
    common.add_argument("--log-level", default=DEFAULT_LOG_LEVEL, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--log-dir", default=LOG_DIR, help="Directory for session logs")
    common.add_argument("--format", default="csv", choices=["csv", "tsv"], help="Delimiter of tabular outputs")

    parser = argparse.ArgumentParser(prog=TOOL_NAME, description="Label noise analysis for music auto-tagging")
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    commands = parser.add_subparsers(dest="command", metavar="command")

    sub = commands.add_parser("ingest", parents=[common], help="Edge list -> label matrix")
    sub.add_argument("edges")
    sub.add_argument("--top-n", type=int, default=50)
    sub.add_argument("--splits", help="'track_id<TAB>split' file")
    sub.add_argument("--edges-out", help="Also write the kept labels as an edge list")
    sub.set_defaults(handler=cmd_ingest)

    sub = commands.add_parser("audit", parents=[common], help="Label matrix statistics")
    sub.add_argument("matrix")
    sub.set_defaults(handler=cmd_audit)

    sub = commands.add_parser("sample", parents=[common], help="Draw an annotation subset")
    sub.add_argument("matrix")
    sub.add_argument("--tag", help="Balanced subset for this tag")
    sub.add_argument("--per-class", type=int, default=50)
    sub.add_argument("--random", type=int, help="Random subset of N tracks")
    sub.add_argument("--tags", help="Comma-separated tags for a random subset")
    sub.add_argument("--split", default="all")
    sub.add_argument("--annotator", default=DEFAULT_ANNOTATOR)
    sub.set_defaults(handler=cmd_sample)

    sub = commands.add_parser("annotate", parents=[common], help="Interactive re-annotation")
    sub.add_argument("subset")
    sub.add_argument("--audio-dir", help="Directory of '<track_id>.wav' excerpts")
    sub.set_defaults(handler=cmd_annotate)

    sub = commands.add_parser("estimate", parents=[common], help="Error rates, quality and prevalence")
    sub.add_argument("matrix", nargs="?")
    sub.add_argument("annotations", nargs="?")
    sub.add_argument("--reference", "--table2", dest="reference", action="store_true", help="Use the bundled reference inputs")
    sub.add_argument("--tags")
    sub.add_argument("--total", type=int, help="Number of tracks T (default: matrix size)")
    sub.add_argument("--ci", action="store_true", help="Bootstrap confidence intervals")
    sub.add_argument("--resamples", type=int, default=BOOTSTRAP_RESAMPLES)
    sub.set_defaults(handler=cmd_estimate)

    sub = commands.add_parser("inject-noise", parents=[common], help="Simulate weak labeling")
    sub.add_argument("matrix")
    sub.add_argument("--spec", required=True, help="Noise spec file")
    sub.add_argument("--edges-out")
    sub.set_defaults(handler=cmd_inject_noise)

    sub = commands.add_parser("featurize", parents=[common], help="WAV directory -> mel features")
    sub.add_argument("audio_dir")
    sub.add_argument("--frames", type=int, default=TARGET_FRAMES)
    sub.add_argument("--power", type=float, default=SPECTRUM_POWER, choices=[1.0, 2.0])
    sub.set_defaults(handler=cmd_featurize)

    sub = commands.add_parser("train", parents=[common], help="Train the convnet")
    sub.add_argument("matrix")
    sub.add_argument("features")
    sub.add_argument("--arch", default="full", choices=list(ARCH_PRESETS))
    sub.add_argument("--lr", type=float, default=LEARNING_RATE)
    sub.add_argument("--batch-size", type=int, default=BATCH_SIZE)
    sub.add_argument("--epochs", type=int, default=MAX_EPOCHS)
    sub.add_argument("--patience", type=int, default=PATIENCE)
    sub.add_argument("--precision", default=PRECISION, choices=["f32", "f64"])
    sub.add_argument("--init", help="Checkpoint to start from")
    sub.set_defaults(handler=cmd_train)

    sub = commands.add_parser("evaluate", parents=[common], help="Per-tag AUC of a checkpoint")
    sub.add_argument("checkpoint")
    sub.add_argument("matrix")
    sub.add_argument("features")
    sub.add_argument("--annotations", help="Evaluate against annotation verdicts instead of groundtruth")
    sub.add_argument("--split", default="test")
    sub.add_argument("--tags")
    sub.add_argument("--ci", action="store_true")
    sub.add_argument("--resamples", type=int, default=BOOTSTRAP_RESAMPLES)
    sub.add_argument("--popularity", action="store_true", help="Also correlate AUC with popularity rank")
    sub.set_defaults(handler=cmd_evaluate)

    sub = commands.add_parser("lvs", parents=[common], help="Label vector similarity")
    sub.add_argument("checkpoint")
    sub.add_argument("--matrix", help="Compare against this matrix's co-occurrence")
    sub.add_argument("--split", default="train")
    sub.add_argument("--k", type=int, default=OVERLAP_TOP_K)
    sub.add_argument("--cosine", action="store_true")
    sub.set_defaults(handler=cmd_lvs)

    sub = commands.add_parser("top-pairs", parents=[common], help="Top co-occurring tag pairs")
    sub.add_argument("matrix")
    sub.add_argument("--k", type=int, default=OVERLAP_TOP_K)
    sub.add_argument("--split", default="all")
    sub.add_argument("--tags", help="Restrict to these tags")
    sub.add_argument("--nco-out", help="Also write the co-occurrence matrix CSV")
    sub.set_defaults(handler=cmd_top_pairs)

    sub = commands.add_parser("correlate", parents=[common], help="Correlate score tables")
    sub.add_argument("--a", nargs="+", required=True)
    sub.add_argument("--b", nargs="+", required=True)
    sub.add_argument("--column", default="auc")
    sub.add_argument("--tags")
    sub.set_defaults(handler=cmd_correlate)

    sub = commands.add_parser("experiment", parents=[common], help="Synthetic noise sweep")
    sub.add_argument("--preset", default="sweep8", choices=["sweep8", "separable"])
    sub.add_argument("--config", help="Experiment config file")
    sub.set_defaults(handler=cmd_experiment)

    sub = commands.add_parser("report", parents=[common], help="Re-render a result directory")
    sub.add_argument("result_dir")
    sub.set_defaults(handler=cmd_report)
    return parser

def main(argv=None):
    """
    Run one subcommand.
    Args:
        argv: Argument list (default: sys.argv[1:])
    Returns:
        0 on success, 1 on a domain error, 2 on a usage error
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.threads < 1:
        parser.print_usage(sys.stderr)
        return 2

    set_command_line(" ".join([TOOL_NAME] + argv))
    set_thread_count(args.threads)
    try:
        initialize_logger(args.log_dir, args.log_level)
        args.handler(args, parser)
        return 0
    except SystemExit as e:
        return int(e.code or 0)
    except TagNoiseError as e:
        log_error(f"{args.command} failed", e)
        return 1
    except (OSError, ValueError) as e:
        log_error(f"{args.command} failed", e)
        return 1
    except KeyboardInterrupt:
        log_event("Interrupted by user")
        return 1
    finally:
        cleanup_logger()

# Program entry point
if __name__ == "__main__":
    sys.exit(main())
