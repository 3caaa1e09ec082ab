from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from bevfuse.commands.common import MODES, SPLITS, config_options, fail, load_config
from bevfuse.errors import BevFuseError
from bevfuse.services.evaluation_service import evaluation_service
from bevfuse.services.storage_service import storage_service


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


@click.command("eval")
@config_options
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice(MODES), default=None, help="Must match the checkpoint")
@click.option("--fusion", type=click.Choice(["camfuse", "concat"]), default=None)
@click.option("--split", type=click.Choice(SPLITS), default="test", show_default=True)
@click.option("--data", type=click.Path(file_okay=False), default=None, help="Dataset root (default: config dataset_root)")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Report directory (default: config output_root)")
def evaluate(
    config_path: Optional[str],
    preset: Optional[str],
    checkpoint: str,
    mode: Optional[str],
    fusion: Optional[str],
    split: str,
    data: Optional[str],
    out: Optional[str],
):
    """
    Evaluate a checkpoint on a dataset split

    Writes report.csv (one row per frame plus an aggregate row) and
    report_by_range.csv, report_by_position.csv, report_by_speed.csv.
    """
    try:
        config = load_config(config_path, preset, mode=mode, fusion=fusion, dataset_root=data, output_root=out)
        result = evaluation_service.evaluate(
            config, storage_service.config_calibration(config), Path(checkpoint), split, Path(config.output_root)
        )
        agg = result.aggregate
        click.echo(
            f"✅ {len(result.frames)} frames: recall {_fmt(agg.recall)} dice {_fmt(agg.dice)} "
            f"precision {_fmt(agg.precision)} iou {_fmt(agg.iou)} D {_fmt(agg.distance_D)} "
            f"ND {_fmt(agg.norm_distance_ND)} E {_fmt(agg.euclidean_E)}"
        )
        click.echo(f"📁 report {result.reports['report']}")
    except (BevFuseError, ValidationError, OSError) as e:
        fail(e)
