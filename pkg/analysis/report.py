"""
report.py
Result directory of an experiment: config, CSV tables, SVG charts and the checkpoint.
"""
import csv
import shutil
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from logger import log_event, log_artifact
from utils import ReportError, ParseError, provenance, provenance_lines, write_table
from groundtruth.cooccur import write_nco_csv, write_joint_csv, read_joint_csv
from network.checkpoint import save_checkpoint, load_checkpoint, extract_label_vectors
from network.train import write_train_log, read_train_log
from .experiments import ExperimentResult, result_correlations
from .lvs import compute_lvs, compare_lvs_nco, write_lvs_csv, write_divergences

SVG_HASH_SALT = "tagnoise"
RESULT_HEADER = ["tag", "drop_rate", "tagability", "auc_vs_clean", "auc_vs_noisy"]


def _fmt(value, digits=6):
    return "" if value is None else f"{value:.{digits}f}"

def _check_result(result):
    if result is None or not result.tags:
        raise ReportError("empty experiment result; nothing to report")
    nTags = len(result.tags)
    for name in ("dropRates", "tagability", "aucClean", "aucNoisy"):
        if len(getattr(result, name)) != nTags:
            raise ReportError(f"incomplete result: {name} has {len(getattr(result, name))} values for {nTags} tags")
    for name in ("tagabilityVsClean", "tagabilityVsNoisy", "cleanVsNoisy"):
        value = getattr(result, name)
        if value is not None and not -1.0 <= value <= 1.0:
            raise ReportError(f"correlation {name} = {value} outside [-1, 1]")

def summary_rows(result):
    return [
        ["spearman_tagability_auc_clean", _fmt(result.tagabilityVsClean)],
        ["spearman_tagability_auc_noisy", _fmt(result.tagabilityVsNoisy)],
        ["pearson_auc_clean_auc_noisy", _fmt(result.cleanVsNoisy)],
    ]

def write_result_csv(result, path, extra=None, delimiter=","):
    """
    Per-tag result table, one row per tag.
    Args:
        result: ExperimentResult
        path: Output path
        extra: Additional provenance fields
        delimiter: ',' or tab
    """
    rows = [
        [tag, _fmt(drop, 3), _fmt(tagability), _fmt(clean), _fmt(noisy)]
        for tag, drop, tagability, clean, noisy in zip(
            result.tags, result.dropRates, result.tagability, result.aucClean, result.aucNoisy
        )
    ]
    write_table(path, RESULT_HEADER, rows, seed=result.seed, extra=extra, delimiter=delimiter)
    log_artifact(path, "experiment result")
    return path

def _save_svg(fig, path, description):
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": description})
    plt.close(fig)
    log_artifact(path, "chart")

def chart_tagability(result, path, description):
    """Grouped bars of tagability, AUC vs clean and AUC vs noisy per tag."""
    x = np.arange(len(result.tags))
    width = 0.27
    series = [
        ("tagability", result.tagability, "#e377c2"),
        ("AUC vs clean", result.aucClean, "#4c78a8"),
        ("AUC vs noisy", result.aucNoisy, "#54a24b"),
    ]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.8 * len(x)), 3.6), constrained_layout=True)
    for offset, (label, values, color) in zip((-1, 0, 1), series):
        heights = [np.nan if value is None else value for value in values]
        ax.bar(x + offset * width, heights, width, label=label, color=color)
    ax.set_xticks(x)
    ax.set_xticklabels(
        [f"{tag}\n(d={drop:.1f})" for tag, drop in zip(result.tags, result.dropRates)],
        fontsize=8
    )
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(loc="lower left", fontsize=8)
    _save_svg(fig, path, description)

def chart_heatmap(values, tags, path, title, description):
    """Square heatmap with tag labels on both axes."""
    fig, ax = plt.subplots(figsize=(5.0, 4.4), constrained_layout=True)
    image = ax.imshow(np.asarray(values, dtype=np.float64), cmap="viridis", interpolation="nearest")
    ax.set_xticks(range(len(tags)))
    ax.set_yticks(range(len(tags)))
    ax.set_xticklabels(tags, rotation=90, fontsize=7)
    ax.set_yticklabels(tags, fontsize=7)
    ax.set_title(title)
    fig.colorbar(image, ax=ax)
    _save_svg(fig, path, description)

def _write_all(result, outDir, seed, delimiter):
    extra = {"config_hash": result.configHash}
    fields = provenance(seed, extra)
    description = "; ".join(f"{key}={'' if value is None else value}" for key, value in fields.items())

    configLines = provenance_lines(seed, extra) + [result.configText.rstrip("\n")]
    (outDir / "config.txt").write_text("\n".join(configLines) + "\n", encoding="utf-8")

    write_result_csv(result, outDir / "result.csv", extra=extra, delimiter=delimiter)
    write_table(outDir / "summary.csv", ["statistic", "value"], summary_rows(result), seed=seed, extra=extra, delimiter=delimiter)
    if result.trainLog:
        write_train_log(result.trainLog, outDir / "train_log.csv", seed=seed, extra=extra, delimiter=delimiter)

    charts = outDir / "charts"
    charts.mkdir()
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "font.family": "DejaVu Sans"}):
        chart_tagability(result, charts / "tagability_auc.svg", description)
        if result.nco is not None:
            write_nco_csv(result.nco, outDir / "nco.csv", seed=seed)
            write_joint_csv(result.nco, outDir / "nco_joint.csv", seed=seed)
            chart_heatmap(result.nco.values, result.nco.vocab.tags, charts / "nco.svg", "NCO", description)
        if result.lvs is not None:
            write_lvs_csv(result.lvs, outDir / "lvs.csv", seed=seed, extra=extra)
            chart_heatmap(result.lvs.values, result.lvs.tags, charts / "lvs.svg", "LVS", description)
    if result.lvsComparison is not None:
        write_divergences(result.lvsComparison, outDir / "divergences.tsv", seed=seed)
    if result.params is not None:
        save_checkpoint(result.params, outDir / "checkpoint.ccnn", seed=seed)

def write_report(result, outDir, seed=None, delimiter=","):
    """
    Write the result directory. Files are staged in a hidden directory inside outDir and moved
    into place only when every file was written.
    Args:
        result: ExperimentResult
        outDir: Result directory (created if missing)
        seed: Seed recorded in every file (default: result.seed)
        delimiter: ',' or tab for tables
    Returns:
        List of written paths
    """
    _check_result(result)
    seed = result.seed if seed is None else seed
    outDir = Path(outDir)
    try:
        outDir.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=".report-", dir=outDir))
    except OSError as e:
        raise ReportError(f"cannot write to {outDir}: {e}")

    try:
        _write_all(result, staging, seed, delimiter)
        written = []
        for item in sorted(staging.iterdir()):
            target = outDir / item.name
            if target.is_dir():
                shutil.rmtree(target)
            item.replace(target)
            written.append(target)
    except OSError as e:
        raise ReportError(f"writing report to {outDir} failed: {e}")
    finally:
        shutil.rmtree(staging, ignore_errors=True)

    log_event(f"Report written to {outDir} ({len(written)} entries)")
    return written

def read_result(resultDir):
    """
    Rebuild an ExperimentResult from a result directory written by write_report.
    Args:
        resultDir: Directory written by write_report
    """
    resultDir = Path(resultDir)
    resultPath = resultDir / "result.csv"
    if not resultPath.exists():
        raise ReportError(f"{resultDir} has no result.csv")
    seed = None
    lines = []
    with open(resultPath, "r", encoding="utf-8", newline="") as handle:
        for line in handle:
            if line.startswith("# seed:"):
                value = line.split(":", 1)[1].strip()
                seed = int(value) if value else None
            elif not line.lstrip().startswith("#") and line.strip():
                lines.append(line)
    delimiter = "\t" if lines and "\t" in lines[0] else ","
    reader = csv.DictReader(lines, delimiter=delimiter)
    if reader.fieldnames != RESULT_HEADER:
        raise ParseError(f"unexpected columns {reader.fieldnames}", resultPath)

    def number(text):
        return float(text) if text else None

    rows = list(reader)
    tagability = tuple(number(row["tagability"]) for row in rows)
    aucClean = tuple(number(row["auc_vs_clean"]) for row in rows)
    aucNoisy = tuple(number(row["auc_vs_noisy"]) for row in rows)
    vsClean, vsNoisy, cleanVsNoisy = result_correlations(tagability, aucClean, aucNoisy)

    configText = ""
    configPath = resultDir / "config.txt"
    if configPath.exists():
        configLines = configPath.read_text(encoding="utf-8").splitlines()
        configText = "\n".join(line for line in configLines if not line.startswith("#")) + "\n"

    tags = tuple(row["tag"] for row in rows)
    params, trainLog, nco, sim, comparison = _read_artifacts(resultDir, tags)
    return ExperimentResult(
        tags=tags,
        dropRates=tuple(float(row["drop_rate"]) for row in rows),
        tagability=tagability,
        aucClean=aucClean,
        aucNoisy=aucNoisy,
        tagabilityVsClean=vsClean,
        tagabilityVsNoisy=vsNoisy,
        cleanVsNoisy=cleanVsNoisy,
        seed=0 if seed is None else seed,
        configText=configText,
        params=params,
        trainLog=trainLog,
        nco=nco,
        lvs=sim,
        lvsComparison=comparison
    )

def _read_artifacts(resultDir, tags):
    """Checkpoint, training log and co-occurrence counts of a result directory; missing files give None."""
    params = None
    sim = None
    nco = None
    comparison = None
    trainLog = []
    checkpointPath = resultDir / "checkpoint.ccnn"
    if checkpointPath.exists():
        params = load_checkpoint(checkpointPath)
        sim = compute_lvs(extract_label_vectors(params, "experiment"))
    logPath = resultDir / "train_log.csv"
    if logPath.exists():
        trainLog = read_train_log(logPath)
    jointPath = resultDir / "nco_joint.csv"
    if jointPath.exists():
        nco = read_joint_csv(jointPath)
        if tuple(nco.vocab.tags) != tags:
            raise ReportError(f"{jointPath} covers tags {nco.vocab.tags}, result.csv covers {tags}")
    if sim is not None and nco is not None and len(tags) >= 3:
        comparison = compare_lvs_nco(sim, nco)
    return params, trainLog, nco, sim, comparison
