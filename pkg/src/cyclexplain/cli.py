"""Command-line entry points wiring the modules into reproducible runs.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure. Every
command persists its resolved configuration next to its outputs and is
deterministic given (config, seed) in single-threaded mode.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import config as cfg
from . import data, metrics, models, relevance, studystats, training


def _json_dump(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    tmp.replace(path)


def _setup(config):
    if config["threads"]:
        torch.set_num_threads(int(config["threads"]))
    torch.manual_seed(config["seed"])


def _load_dataset(config):
    ds = config["dataset"]
    if ds["source"] == "synthetic":
        samples = data.generate_synthetic_dataset(ds["n"], config["seed"],
                                                  ds["size"])
        data.stratified_split(samples, ds["train_fraction"], config["seed"])
        return samples
    samples, _ = data.load_manifest(ds["manifest"])
    if any(not s.split for s in samples) or all(s.split == "train" for s in samples):
        data.stratified_split(samples, ds["train_fraction"], config["seed"])
    return samples


config_options = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="YAML config file."),
    click.option("--set", "overrides", multiple=True, metavar="KEY.PATH=VALUE",
                 help="Dotted-path config override (repeatable)."),
]


def _with_config(fn):
    for opt in reversed(config_options):
        fn = opt(fn)
    return fn


@click.group()
def cli():
    """Counterfactual decision explanations for binary image classifiers."""


@cli.command("train-classifier")
@_with_config
def cmd_train_classifier(config_path, overrides):
    """Train the classifier to be explained; write checkpoint and metrics."""
    config = cfg.load_config(config_path, overrides)
    _setup(config)
    out_dir = Path(config["output_dir"])
    cfg.save_resolved(config, out_dir)

    samples = _load_dataset(config)
    size = samples[0].image.shape[0]
    classifier = models.build_classifier(cfg.classifier_spec(config), size,
                                         config["seed"])
    classifier, train_metrics = training.train_classifier(
        classifier, samples, cfg.train_config(config))

    test = [s for s in samples if s.split == "test"]
    labels = [s.label for s in test]
    with torch.no_grad():
        probs = classifier.prob_positive(
            np.stack([s.image for s in test])).numpy()
    report = metrics.compute_metrics(
        labels, probs, threshold=config["eval"]["threshold"],
        n_boot=config["eval"]["n_boot"], seed=config["seed"])

    models.save_classifier(classifier, out_dir / "classifier.pt",
                           seed=config["seed"])
    _json_dump({"training": train_metrics, "report": report.to_dict()},
               out_dir / "classifier_metrics.json")
    click.echo(f"classifier written to {out_dir / 'classifier.pt'}")


@cli.command("train-explainer")
@_with_config
def cmd_train_explainer(config_path, overrides):
    """Train the generator/discriminator pairs around a frozen classifier."""
    config = cfg.load_config(config_path, overrides)
    _setup(config)
    out_dir = Path(config["output_dir"])
    cfg.save_resolved(config, out_dir)

    ckpt = config["classifier_checkpoint"] or out_dir / "classifier.pt"
    ckpt = Path(ckpt)
    if not ckpt.exists():
        raise cfg.ConfigError(f"classifier checkpoint not found: {ckpt}")
    classifier = models.load_classifier(ckpt)

    samples = _load_dataset(config)
    bundle = models.build_bundle(classifier, cfg.generator_spec(config),
                                 cfg.discriminator_spec(config), config["seed"])
    bundle, log = training.train_explainer(bundle, samples,
                                           cfg.train_config(config))
    models.save_bundle(bundle, out_dir / "bundle.pt")
    log.save(out_dir / "trainlog.jsonl", out_dir / "trainevents.jsonl")

    test = [s for s in samples if s.split == "test"] or samples
    report = metrics.evaluate_transfer(bundle, test,
                                       n_boot=config["eval"]["n_boot"],
                                       seed=config["seed"])
    _json_dump(report.to_dict(), out_dir / "transfer.json")
    click.echo(f"bundle written to {out_dir / 'bundle.pt'}")


@cli.command("explain")
@_with_config
@click.argument("inputs", nargs=-1, required=True, type=click.Path())
def cmd_explain(config_path, overrides, inputs):
    """Produce overlay + raw relevance map + probabilities per input image."""
    config = cfg.load_config(config_path, overrides)
    _setup(config)
    out_dir = Path(config["output_dir"])
    cfg.save_resolved(config, out_dir)

    ckpt = config["bundle_checkpoint"] or out_dir / "bundle.pt"
    ckpt = Path(ckpt)
    if not ckpt.exists():
        raise cfg.ConfigError(f"bundle checkpoint not found: {ckpt}")
    bundle = models.load_bundle(ckpt)

    seen_stems = set()
    failures = 0
    for item in inputs:
        path = Path(item)
        try:
            image = data.validate_image(data._load_image_file(path))
            stem = path.stem
            if stem in seen_stems:
                stem = f"{stem}_{len(seen_stems)}"
            seen_stems.add(stem)
            rmap = relevance.explain(bundle, image, source_id=stem)
            relevance.export_map(rmap, out_dir, base_image=image,
                                 gain=config["explain"]["gain"])
            click.echo(f"explained {path}")
        except (data.DataError, OSError) as exc:
            failures += 1
            click.echo(f"error: {path}: {exc}", err=True)
    if failures == len(inputs):
        raise RuntimeError("all inputs failed")


@cli.command("study-report")
@click.argument("responses", type=click.Path())
@click.option("--output", "out_dir", type=click.Path(), default="study_report")
def cmd_study_report(responses, out_dir):
    """Full user-study analysis from a responses CSV."""
    out_dir = Path(out_dir)
    table = studystats.load_responses(responses)

    adjusted = studystats.z_adjust(table)
    mat = studystats.criterion_matrix(table)
    report = {
        "n_raters": int(table["rater_id"].nunique()),
        "n_items": int(table["item_id"].nunique()),
        "method_comparison": studystats.method_comparison(table),
        "interobserver_rho": {
            c: studystats.interobserver_rho(adjusted, c)
            for c in sorted(table["criterion"].unique())
        },
        "order_effects": studystats.order_effect_test(table),
        "kmo": studystats.kmo(mat),
        "general_factor": studystats.general_factor(mat),
    }
    _json_dump(report, out_dir / "study_report.json")

    lines = [f"raters: {report['n_raters']}  items: {report['n_items']}",
             f"KMO: {report['kmo']:.3f}",
             "general factor explained variance: "
             f"{report['general_factor']['explained_variance_fraction']:.3f}"]
    for crit, rho in report["interobserver_rho"].items():
        lines.append(f"inter-observer rho [{crit}]: {rho:.3f}")
    for crit, block in report["method_comparison"]["criteria"].items():
        for method, vals in block["per_method"].items():
            lines.append(
                f"{crit:>12} {method:>12}: raw {vals['raw_mean']:+.2f} "
                f"adj {vals['adjusted_mean']:+.2f} rank {vals['average_rank']:.2f}")
    summary = "\n".join(lines) + "\n"
    (out_dir / "summary.txt").write_text(summary)
    click.echo(summary)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 1
    except (click.UsageError, click.ClickException, cfg.ConfigError,
            studystats.StudyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # runtime failure
        click.echo(f"runtime error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
