from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from bevfuse.commands.common import config_options, fail, load_config
from bevfuse.config import settings
from bevfuse.errors import BevFuseError
from bevfuse.services.sim_service import sim_service


@click.command("simulate")
@config_options
@click.option("--seed", type=int, default=None, help="Master seed (default BEVFUSE_DEFAULT_SEED)")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Dataset root (default: config dataset_root)")
@click.option("--scenes", type=click.IntRange(min=1), default=None, help="Total scene count, split 24/3/8")
def simulate(config_path: Optional[str], preset: Optional[str], seed: Optional[int], out: Optional[str], scenes: Optional[int]):
    """
    Generate a synthetic dataset

    Writes train/val/test scene directories with fisheye images, ultrasonic
    frames, odometry, ground-truth masks and pairing indices.
    """
    try:
        config = load_config(config_path, preset, scenes=scenes)
        root = Path(out or config.dataset_root)
        summary = sim_service.generate_dataset(config, settings.DEFAULT_SEED if seed is None else seed, root)
        click.echo(
            f"✅ {summary['train']} train / {summary['val']} val / {summary['test']} test scenes, "
            f"{summary['frames']} frames written to {root}"
        )
    except (BevFuseError, ValidationError, OSError) as e:
        fail(e)
