#!/usr/bin/env python3
"""
Cough Counter

Command-line entry point: synthesizes corpora, extracts features, selects
features, trains the two-network cascade, detects coughs and evaluates it
with leave-one-subject-out cross-validation.
"""

import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import click

from cough_counter.audio_io import (
    CorpusManifest,
    ManifestEntry,
    load_manifest,
    load_manifest_recordings,
    load_recording,
    write_annotations,
    write_manifest,
    write_wav,
)
from cough_counter.config import (
    RunConfig,
    find_run_config_file,
    load_run_config,
    resolve_run_config,
    write_run_config,
)
from cough_counter.detector import (
    detect,
    load_cascade,
    save_cascade,
    summarize_detections,
    train_cascade,
    write_detections,
)
from cough_counter.errors import AudioFormatError, ConfigurationError, NumericError
from cough_counter.evaluation import (
    compare_channel_configurations,
    fold_tracks,
    loso_cross_validate,
    operating_point,
    sweep_tracks,
    write_report,
    write_sweep_csv,
)
from cough_counter.features import (
    export_csv,
    extract_corpus,
    read_feature_directory,
    write_catalog,
    write_feature_matrix,
)
from cough_counter.mlp import Task, task_dataset, task_rng
from cough_counter.selection import save_selection, select_features
from cough_counter.synthetic import generate_synthetic_corpus

CHANNEL_CHOICES = click.Choice(["audio", "contact_trachea", "contact_thorax"])

config_option = click.option("--config", "config_file", help="Path to a YAML run config file")
seed_option = click.option("--seed", type=int, help="Seed fixing every random draw")
jobs_option = click.option("--jobs", type=int, help="Maximum number of worker processes")
channels_option = click.option(
    "--channels", multiple=True, type=CHANNEL_CHOICES, help="Channel role to use (repeatable)"
)


def _exit_code(e: Exception) -> int:
    if isinstance(e, (NumericError, ArithmeticError)):
        return 3
    if isinstance(e, (AudioFormatError, OSError)):
        return 2
    return 1


def _fail(e: Exception) -> None:
    click.secho(f"Error: {e}", fg="red", err=True)
    sys.exit(_exit_code(e))


def _resolve(config_file: Optional[str], overrides: Dict) -> RunConfig:
    """Defaults, then the config file (given or discovered), then flags."""
    config_path = Path(config_file) if config_file else find_run_config_file()
    file_values = {}
    if config_path:
        click.secho(f"Using run config file: {config_path}", fg="green")
        file_values = load_run_config(config_path)
    for key in ("channels", "audio"):
        if overrides.get(key) == ():
            overrides[key] = None
    return resolve_run_config(file_values, overrides)


def _require_seed(cfg: RunConfig) -> None:
    if cfg.seed is None:
        raise ConfigurationError("--seed is required for this command")


def _output_dir(cfg: RunConfig) -> Path:
    if not cfg.output_dir:
        raise ConfigurationError("--out-dir is required")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _load_corpus(cfg: RunConfig) -> List:
    """Feature matrices from a feature directory, or extracted from the manifest."""
    if cfg.features_dir:
        matrices = read_feature_directory(cfg.features_dir)
        return [m.select_channels(cfg.channel_roles) for m in matrices]
    if not cfg.manifest:
        raise ConfigurationError("Either --features or --manifest is required")
    recordings = load_manifest_recordings(load_manifest(cfg.manifest))
    return extract_corpus(recordings, cfg.channel_roles, cfg.jobs)


@click.group()
@click.option(
    "--log-level",
    default="WARNING",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help="Logging verbosity",
)
def cli(log_level):
    """Automatic cough detection from ambulatory audio recordings."""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format="%(levelname)s %(name)s: %(message)s")


@cli.command("synth")
@config_option
@seed_option
@click.option("--subjects", type=int, help="Number of synthetic subjects")
@click.option("--sessions", type=int, help="Sessions per subject")
@channels_option
@click.option("--out-dir", help="Directory for WAV, annotation and manifest files")
def synth(config_file, seed, subjects, sessions, channels, out_dir):
    """Generate a labeled synthetic corpus and its manifest."""
    try:
        cfg = _resolve(
            config_file,
            {"seed": seed, "subjects": subjects, "sessions": sessions, "channels": channels, "output_dir": out_dir},
        )
        _require_seed(cfg)
        out = _output_dir(cfg)
        recordings = generate_synthetic_corpus(cfg.seed, cfg.subjects, cfg.sessions, cfg.channel_roles)

        entries = []
        for rec in recordings:
            wav_path, csv_path = out / f"{rec.name}.wav", out / f"{rec.name}.csv"
            write_wav(wav_path, rec)
            write_annotations(rec.events, csv_path)
            entries.append(ManifestEntry(wav_path, csv_path, rec.subject_id, rec.session_condition, rec.roles))
        manifest_path = out / "manifest.json"
        write_manifest(CorpusManifest(entries), manifest_path)
        write_run_config(cfg, out)

        click.secho(f"Generated {len(recordings)} recordings for {cfg.subjects} subjects", fg="green")
        click.secho(f"Manifest: {manifest_path}", fg="blue")
    except Exception as e:
        _fail(e)


@cli.command("extract")
@config_option
@click.option("--manifest", help="Corpus manifest (JSON)")
@channels_option
@jobs_option
@click.option("--out-dir", help="Directory for feature files")
@click.option("--csv", "with_csv", is_flag=True, help="Also export every matrix as CSV")
def extract(config_file, manifest, channels, jobs, out_dir, with_csv):
    """Extract per-frame feature matrices for every recording of a manifest."""
    try:
        cfg = _resolve(
            config_file,
            {
                "manifest": manifest, "channels": channels, "jobs": jobs,
                "output_dir": out_dir, "with_csv": with_csv or None,
            },
        )
        if not cfg.manifest:
            raise ConfigurationError("--manifest is required")
        out = _output_dir(cfg)
        recordings = load_manifest_recordings(load_manifest(cfg.manifest))
        matrices = extract_corpus(recordings, cfg.channel_roles, cfg.jobs)

        for matrix in matrices:
            write_feature_matrix(matrix, out / f"{matrix.recording}.features")
            if cfg.with_csv:
                export_csv(matrix, out / f"{matrix.recording}.csv")
        write_catalog(matrices[0].catalog, out / "catalog.json")
        write_run_config(cfg, out)

        click.secho(
            f"Extracted {len(matrices)} feature files with {len(matrices[0].catalog)} columns each", fg="green"
        )
    except Exception as e:
        _fail(e)


@cli.command("select")
@config_option
@click.option("--features", "features_dir", help="Directory of feature files")
@click.option("--manifest", help="Corpus manifest, when features are not extracted yet")
@click.option("--task", type=click.Choice([t.value for t in Task]), help="Subtask (default: activity)")
@click.option("--n-selected", type=int, help="Number of features to select")
@click.option("--n-bins", type=int, help="Equal-frequency bins per feature")
@channels_option
@seed_option
@click.option("--out-dir", help="Directory for the selection file")
def select(config_file, features_dir, manifest, task, n_selected, n_bins, channels, seed, out_dir):
    """Run feature selection for one subtask, for inspection."""
    try:
        cfg = _resolve(
            config_file,
            {
                "features_dir": features_dir, "manifest": manifest, "task": task, "n_selected": n_selected,
                "n_bins": n_bins, "channels": channels, "seed": seed, "output_dir": out_dir,
            },
        )
        _require_seed(cfg)
        out = _output_dir(cfg)
        matrices = _load_corpus(cfg)
        task = Task(cfg.task)
        train = cfg.train_config()
        values, targets = task_dataset(matrices, task, train.negative_ratio, task_rng(cfg.seed, task))
        selection = select_features(
            values, targets.astype(int), matrices[0].catalog.names, cfg.n_selected, cfg.n_bins,
            task.value, matrices[0].catalog.catalog_hash,
        )
        path = out / f"{task.value}_selection.json"
        save_selection(selection, path)
        write_run_config(cfg, out)

        click.secho(f"Selected {len(selection)} features for the {task.value} task: {path}", fg="green")
        for name, score in list(zip(selection.names, selection.scores))[:10]:
            click.secho(f"  {name}: {score:.4f}", fg="blue")
    except Exception as e:
        _fail(e)


@cli.command("train")
@config_option
@click.option("--features", "features_dir", help="Directory of feature files")
@click.option("--manifest", help="Corpus manifest, when features are not extracted yet")
@channels_option
@click.option("--n-selected", type=int, help="Number of features per network")
@click.option("--epochs", type=int, help="Maximum training epochs")
@seed_option
@jobs_option
@click.option("--out-dir", help="Directory for the trained models")
def train(config_file, features_dir, manifest, channels, n_selected, epochs, seed, jobs, out_dir):
    """Select features and train both networks on every given recording."""
    try:
        cfg = _resolve(
            config_file,
            {
                "features_dir": features_dir, "manifest": manifest, "channels": channels, "n_selected": n_selected,
                "train": {"epochs": epochs}, "seed": seed, "jobs": jobs, "output_dir": out_dir,
            },
        )
        _require_seed(cfg)
        out = _output_dir(cfg)
        matrices = _load_corpus(cfg)
        cascade = train_cascade(matrices, cfg.train_config(), cfg.n_selected, cfg.n_bins)
        save_cascade(cascade, out)
        write_run_config(cfg, out)

        click.secho(f"Trained cascade on {len(matrices)} recordings: {out}", fg="green")
    except Exception as e:
        _fail(e)


@cli.command("detect")
@config_option
@click.option("--models", "models_dir", help="Directory of trained models")
@click.option("--audio", "audio_files", multiple=True, help="WAV file to process (repeatable)")
@click.option("--manifest", help="Corpus manifest of recordings to process")
@click.option("--threshold", type=float, help="Decision threshold on the fused posterior")
@click.option("--out-dir", help="Directory for detection CSVs")
def detect_command(config_file, models_dir, audio_files, manifest, threshold, out_dir):
    """Detect cough events in recordings with a trained cascade."""
    try:
        cfg = _resolve(
            config_file,
            {
                "models_dir": models_dir, "audio": audio_files, "manifest": manifest,
                "threshold": threshold, "output_dir": out_dir,
            },
        )
        if not cfg.models_dir:
            raise ConfigurationError("--models is required")
        out = _output_dir(cfg)
        cascade = load_cascade(cfg.models_dir)
        recordings = [load_recording(p, channel_roles=cascade.channels) for p in cfg.audio]
        if cfg.manifest:
            recordings += load_manifest_recordings(load_manifest(cfg.manifest))
        if not recordings:
            raise ConfigurationError("Nothing to process: give --audio or --manifest")

        results = {}
        for rec in recordings:
            events = detect(rec, cascade, config=cfg.detection_config())
            write_detections(events, out / f"{rec.name}.csv")
            results[rec.name] = events
        summary = summarize_detections(results, cfg.threshold)
        with open(out / "detections.json", "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2)
            f.write("\n")
        write_run_config(cfg, out)

        click.secho(f"Detected {summary['total_events']} cough events in {len(recordings)} recordings", fg="green")
    except Exception as e:
        _fail(e)


@cli.command("evaluate")
@config_option
@click.option("--features", "features_dir", help="Directory of feature files")
@click.option("--manifest", help="Corpus manifest, when features are not extracted yet")
@channels_option
@click.option("--threshold", type=float, help="Decision threshold on the fused posterior")
@click.option("--epochs", type=int, help="Maximum training epochs")
@seed_option
@jobs_option
@click.option("--out-dir", help="Directory for the report")
def evaluate(config_file, features_dir, manifest, channels, threshold, epochs, seed, jobs, out_dir):
    """Leave-one-subject-out evaluation at one threshold."""
    try:
        cfg = _resolve(
            config_file,
            {
                "features_dir": features_dir, "manifest": manifest, "channels": channels, "threshold": threshold,
                "train": {"epochs": epochs}, "seed": seed, "jobs": jobs, "output_dir": out_dir,
            },
        )
        _require_seed(cfg)
        out = _output_dir(cfg)
        report = loso_cross_validate(_load_corpus(cfg), cfg.pipeline_config())
        json_path, text_path = write_report(report, out)
        write_run_config(cfg, out)

        click.echo(report.to_text())
        click.secho(f"Report written to {json_path} and {text_path}", fg="green")
    except Exception as e:
        _fail(e)


@cli.command("sweep")
@config_option
@click.option("--features", "features_dir", help="Directory of feature files")
@click.option("--manifest", help="Corpus manifest, when features are not extracted yet")
@channels_option
@click.option("--thresholds", help="Comma-separated ascending thresholds")
@click.option("--epochs", type=int, help="Maximum training epochs")
@seed_option
@jobs_option
@click.option("--out-dir", help="Directory for the sweep CSV")
def sweep(config_file, features_dir, manifest, channels, thresholds, epochs, seed, jobs, out_dir):
    """Sensitivity and specificity across decision thresholds."""
    try:
        parsed = None
        if thresholds:
            try:
                parsed = [float(t) for t in thresholds.split(",")]
            except ValueError as e:
                raise ConfigurationError(f"Invalid threshold list '{thresholds}'") from e
        cfg = _resolve(
            config_file,
            {
                "features_dir": features_dir, "manifest": manifest, "channels": channels, "thresholds": parsed,
                "train": {"epochs": epochs}, "seed": seed, "jobs": jobs, "output_dir": out_dir,
            },
        )
        _require_seed(cfg)
        out = _output_dir(cfg)
        pipeline = cfg.pipeline_config()
        points = sweep_tracks(fold_tracks(_load_corpus(cfg), pipeline), cfg.thresholds, pipeline)
        write_sweep_csv(points, out / "sweep.csv")
        best = operating_point(points)
        with open(out / "operating_point.json", "w", encoding="utf-8") as f:
            json.dump(best.__dict__, f, indent=2)
            f.write("\n")
        write_run_config(cfg, out)

        click.secho(f"Swept {len(points)} thresholds: {out / 'sweep.csv'}", fg="green")
        click.secho(
            f"Operating point: threshold {best.threshold:.2f}, sensitivity {best.sensitivity:.1f}%, "
            f"specificity {best.specificity:.1f}%",
            fg="blue",
        )
    except Exception as e:
        _fail(e)


@cli.command("compare")
@config_option
@click.option("--features", "features_dir", help="Directory of multi-channel feature files")
@click.option("--manifest", help="Corpus manifest, when features are not extracted yet")
@channels_option
@click.option("--epochs", type=int, help="Maximum training epochs")
@seed_option
@jobs_option
@click.option("--out-dir", help="Directory for the comparison table")
def compare(config_file, features_dir, manifest, channels, epochs, seed, jobs, out_dir):
    """Compare sensor configurations: each channel alone, then all combined."""
    try:
        cfg = _resolve(
            config_file,
            {
                "features_dir": features_dir, "manifest": manifest, "channels": channels,
                "train": {"epochs": epochs}, "seed": seed, "jobs": jobs, "output_dir": out_dir,
            },
        )
        _require_seed(cfg)
        out = _output_dir(cfg)
        rows = compare_channel_configurations(_load_corpus(cfg), cfg.pipeline_config())
        with open(out / "channel_comparison.json", "w", encoding="utf-8") as f:
            json.dump(rows, f, indent=2)
            f.write("\n")
        write_run_config(cfg, out)

        for row in rows:
            sens = "-" if row["sensitivity"] is None else f"{row['sensitivity']:.1f}"
            spec = "-" if row["specificity"] is None else f"{row['specificity']:.1f}"
            click.secho(f"  {row['configuration']:<20} sensitivity {sens:>6}  specificity {spec:>6}", fg="blue")
    except Exception as e:
        _fail(e)


if __name__ == "__main__":
    cli()
