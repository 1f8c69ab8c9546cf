"""CLI entry point: all Click commands for cva."""

from __future__ import annotations

import logging
from pathlib import Path

import click

from . import __version__
from .config import RUN_CONFIG_NAME, PROFILES, resolve_config, sweep_configs, write_config
from .errors import CrossViewError

log = logging.getLogger(__name__)

# flag name -> TrainConfig key, for the plain overrides
OVERRIDE_FLAGS = {
    "seed": "seed",
    "epochs": "epochs",
    "lr": "lr",
    "batch_size": "batch_size",
    "nmf_iters": "nmf_iters",
    "lambda1": "lambda1",
    "lambda2": "lambda2",
    "lambda3": "lambda3",
    "alpha": "alpha",
}
# flag name -> TrainConfig key, for the comma-separated sweep flags
SWEEP_FLAGS = {
    "temperature": "temperature",
    "channels": "channels",
    "rank": "rank",
    "n_exo": "n_exo",
}


def _setup_logging(verbose: bool) -> None:
    from rich.console import Console
    from rich.logging import RichHandler

    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def config_options(func):
    """Shared run-configuration flags for train and ablation."""
    options = [
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     default=None, help="Flat key=value config file"),
        click.option("--profile", type=click.Choice(sorted(PROFILES)), default=None,
                     help="Base profile (default: toy, or the file's profile key)"),
        click.option("--seed", type=int, default=None),
        click.option("--epochs", type=int, default=None),
        click.option("--lr", type=float, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--nmf-iters", type=int, default=None),
        click.option("--lambda1", type=float, default=None),
        click.option("--lambda2", type=float, default=None),
        click.option("--lambda3", type=float, default=None),
        click.option("--alpha", type=float, default=None),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _overrides(values: dict[str, object]) -> dict[str, str]:
    return {OVERRIDE_FLAGS[k]: str(v) for k, v in values.items() if k in OVERRIDE_FLAGS and v is not None}


def _split_sweep(raw: str | None) -> list[str]:
    return [v.strip() for v in raw.split(",") if v.strip()] if raw else []


@click.group()
@click.version_option(__version__, prog_name="cva")
@click.option("--verbose", is_flag=True, help="Log progress at INFO level")
def main(verbose: bool) -> None:
    """Cross-view affordance grounding: synthesise, train, ground and evaluate."""
    _setup_logging(verbose)


@main.command("synth")
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--classes", "n_classes", default=3, show_default=True, help="Number of affordance classes")
@click.option("--ego", "n_ego", default=30, show_default=True, help="Egocentric images per class")
@click.option("--exo", "n_exo", default=30, show_default=True, help="Exocentric images per class")
@click.option("--seed", default=7, show_default=True)
@click.option("--image-size", default=64, show_default=True)
def cmd_synth(out: Path, n_classes: int, n_ego: int, n_exo: int, seed: int, image_size: int) -> None:
    """Generate a synthetic dataset and its manifest."""
    from .synth import generate_synthetic

    click.echo(f"Generating {n_classes} classes into {out}…", err=True)
    manifest = generate_synthetic(out, n_classes, n_ego, n_exo, seed, image_size)
    click.echo(str(manifest))


@main.command("annotate")
@click.argument("annotations", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--sigma", type=float, default=None, help="Gaussian width in pixels (default: 5% of the longer side)")
@click.option("--affordance", default="gt", show_default=True, help="Affordance tag used in the output file names")
def cmd_annotate(annotations: Path, out: Path, sigma: float | None, affordance: str) -> None:
    """Turn point annotations into ground-truth heatmaps."""
    from .dataset import load_annotations, points_to_heatmap, scale_split
    from .heatmap import write_heatmap

    anns = load_annotations(annotations)
    for ann in anns:
        heatmap = points_to_heatmap(ann, sigma, affordance=affordance)
        write_heatmap(out, heatmap)
        click.echo(f"{ann.image_id}\t{scale_split(heatmap.map)}")
    click.echo(f"Wrote {len(anns)} heatmap(s) to {out}", err=True)


@main.command("train")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path))
@config_options
@click.option("--temperature", default=None, help="ACP temperature; comma-separated values sweep")
@click.option("--channels", default=None, help="AIM channel count; comma-separated values sweep")
@click.option("--rank", default=None, help="Dictionary rank; comma-separated values sweep")
@click.option("--n-exo", default=None, help="Exocentric images per instance; comma-separated values sweep")
@click.option("--resume", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None,
              help="Continue from a checkpoint directory")
def cmd_train(manifest: Path, out: Path, config_file: Path | None, profile: str | None, resume: Path | None,
              **flags: object) -> None:
    """Train a model (or one model per sweep combination)."""
    from .dataset import load_manifest
    from .trainer import train

    base = resolve_config(profile, config_file, _overrides(flags))
    sweeps = {SWEEP_FLAGS[k]: _split_sweep(flags.get(k)) for k in SWEEP_FLAGS}  # type: ignore[arg-type]
    runs = sweep_configs(base, sweeps)
    if resume is not None and len(runs) > 1:
        raise click.UsageError("--resume cannot be combined with a sweep")
    records = load_manifest(manifest)

    click.echo(f"Training {len(runs)} configuration(s)…", err=True)
    for name, config in runs:
        run_dir = out / name if name else out
        if name:
            click.echo(f"  {name}", err=True)

        def report(epoch: int, losses: dict[str, float], total_epochs: int = config.epochs) -> None:
            click.echo(f"    epoch {epoch}/{total_epochs}  total={losses['total']:.4f}", err=True)

        result = train(records, config, run_dir, resume=resume, on_epoch=report)
        click.echo(str(result.checkpoint))


@main.command("ground")
@click.argument("checkpoint", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=False)
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.option("--image", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Ground a single image instead of a manifest")
@click.option("--label", default=None, help="Affordance to ground for --image")
@click.option("--workers", default=1, show_default=True)
def cmd_ground(checkpoint: Path, manifest: Path | None, out: Path, split: str, image: Path | None,
               label: str | None, workers: int) -> None:
    """Write heatmaps for the egocentric records of a split, or for one --image/--label pair."""
    from .dataset import load_image, load_manifest, select
    from .grounder import ground, ground_records
    from .heatmap import write_heatmap
    from .model import load_model

    if (image is None) != (label is None):
        raise click.UsageError("--image and --label must be given together")
    if image is None and manifest is None:
        raise click.UsageError("give a MANIFEST or an --image/--label pair")

    model, _ = load_model(checkpoint)
    if image is not None:
        heatmap = ground(load_image(image), label, model, image_id=image.stem)
        click.echo(str(write_heatmap(out, heatmap)))
        return

    records = select(load_manifest(manifest), role="egocentric", split=split)  # type: ignore[arg-type]
    click.echo(f"Grounding {len(records)} image(s)…", err=True)
    paths = ground_records(model, records, out, workers=workers)
    click.echo(f"Wrote {len(paths)} heatmap(s) to {out}")


@main.command("eval")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("heatmap_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Where to write report.csv and per_image.csv (default: HEATMAP_DIR)")
@click.option("--workers", default=1, show_default=True)
def cmd_eval(manifest: Path, heatmap_dir: Path, out: Path | None, workers: int) -> None:
    """Score heatmaps against the ground truth of the test egocentric records."""
    from .dataset import load_manifest
    from .metrics import evaluate_set
    from .report import print_tables, report_tables

    out = out or heatmap_dir
    report = evaluate_set(heatmap_dir, load_manifest(manifest), workers=workers)
    report.write_csv(out / "report.csv")
    report.write_images_csv(out / "per_image.csv")
    print_tables(report_tables(report.slices))
    if report.missing:
        raise CrossViewError(f"{len(report.missing)} prediction(s) missing: {', '.join(report.missing)}")


@main.command("report")
@click.argument("report_csv", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def cmd_report(report_csv: Path) -> None:
    """Render per-class and per-attribute tables from a report.csv."""
    from .metrics import read_report
    from .report import print_tables, report_tables

    print_tables(report_tables(read_report(report_csv)))


@main.command("ablation")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--seeds", default=5, show_default=True, help="Number of consecutive seeds per variant")
@config_options
def cmd_ablation(manifest: Path, out: Path, seeds: int, config_file: Path | None, profile: str | None,
                 **flags: object) -> None:
    """Train, ground and evaluate the full model against lambda2=0 and lambda3=0."""
    from .ablation import run_ablation
    from .dataset import load_manifest
    from .report import ablation_table, print_tables

    base = resolve_config(profile, config_file, _overrides(flags))
    write_config(out / RUN_CONFIG_NAME, base.to_mapping())
    results = run_ablation(
        load_manifest(manifest), base, out, seeds,
        progress=lambda msg: click.echo(f"Running {msg}…", err=True),
    )
    print_tables([ablation_table(results)])
