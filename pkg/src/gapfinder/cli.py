"""``gapfinder`` command line: dataset -> train -> attack -> report."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import cnn_model, dataset_forge, pnm
from .report import DEFAULT_DROP_THRESHOLD, DEFAULT_TOP_K, load_run, read_trace_csv, render_report, run_attack

U64 = click.IntRange(0, 2**64 - 1)


class _Fail(click.ClickException):
    exit_code = 1

    def show(self, file=None):
        click.echo(f"error: {self.message}", err=True)


def _guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (OSError, ValueError, FloatingPointError) as exc:
        raise _Fail(str(exc)) from exc


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log training progress.")
def main(verbose):
    """Search for worst-case images that expose cognition gaps in a small CNN."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--mode", required=True, type=click.Choice(dataset_forge.MODES))
@click.option("--n", required=True, type=int)
@click.option("--side", required=True, type=int)
@click.option("--seed", required=True, type=U64)
def dataset(out_dir, mode, n, side, seed):
    """Render a synthetic glyph dataset to PPM/PGM files plus labels.csv."""
    ds = _guard(dataset_forge.generate_dataset, n, mode, side, seed)
    _guard(dataset_forge.write_dataset, ds, out_dir)
    click.echo(f"wrote {len(ds)} images ({mode}, seed {seed}) to {out_dir}")


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--epochs", required=True, type=int)
@click.option("--lr", required=True, type=float)
@click.option("--batch", required=True, type=int)
@click.option("--seed", required=True, type=U64)
def train(data_dir, out_path, epochs, lr, batch, seed):
    """Train the reference CNN on a dataset directory and save a .wcgf file."""
    ds = _guard(dataset_forge.read_dataset, data_dir)
    cfg = _guard(cnn_model.TrainConfig, epochs, lr, batch, seed)
    model = _guard(cnn_model.build_model, len(dataset_forge.CLASS_NAMES), ds.side, seed, dataset_forge.CLASS_NAMES)
    model = _guard(cnn_model.train, model, ds, cfg)
    acc = cnn_model.evaluate(model, ds.images, ds.labels)
    _guard(cnn_model.save_weights, model, out_path)
    click.echo(f"train accuracy {acc:.4f}; saved {out_path}")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--drop-threshold", default=DEFAULT_DROP_THRESHOLD, show_default=True, type=float)
@click.option("--top-k", default=DEFAULT_TOP_K, show_default=True, type=click.IntRange(min=1))
def attack(model_path, image_path, spec_path, out_dir, drop_threshold, top_k):
    """Run the worst-case search and write the run directory."""
    report = _guard(run_attack, model_path, image_path, spec_path, out_dir, drop_threshold, top_k)
    click.echo(render_report(report, "text").decode("utf-8"), nl=False)
    click.echo(f"elapsed: {report.elapsed_seconds:.3f} s")


@main.command()
@click.option("--trace", "run_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--format", "fmt", default="text", show_default=True, type=click.Choice(["text", "csv"]))
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Also render topk.png, trace.png and iterations.png into the run directory.")
def report(run_dir, fmt, figures):
    """Print a finished run's report; optionally render its figures."""
    rep = _guard(load_run, run_dir)
    click.echo(render_report(rep, fmt).decode("utf-8"), nl=False)
    if figures:
        from .plotting import render_run_figures

        rows = _guard(read_trace_csv, Path(run_dir) / "trace.csv")
        frames = sorted(Path(run_dir).glob("iter_*.ppm"))
        images = [_guard(pnm.read_ppm, p) for p in frames]
        for path in render_run_figures(run_dir, rep, rows, images):
            click.echo(f"figure: {path}", err=True)


if __name__ == "__main__":
    sys.exit(main())
