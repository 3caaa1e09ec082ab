from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from bevfuse.commands.common import config_options, fail, load_config
from bevfuse.errors import BevFuseError
from bevfuse.services.mapping_service import mapping_service


@click.command("map-uls")
@config_options
@click.argument("scene_dir", type=click.Path(file_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory (default: SCENE_DIR/uls_maps)")
def map_uls(config_path: Optional[str], preset: Optional[str], scene_dir: str, out: Optional[str]):
    """
    Export one ultrasonic BEV map per camera frame

    Each map is filled from the paired ultrasonic frame and warped to the
    camera timestamp; NNNNNN.npy holds exact amplitudes, NNNNNN.pgm a
    per-frame normalised view.
    """
    try:
        config = load_config(config_path, preset)
        scene = Path(scene_dir)
        out_dir = Path(out) if out else scene / "uls_maps"
        count = mapping_service.map_scene(scene, out_dir, config.grid)
        click.echo(f"✅ {count} ultrasonic maps written to {out_dir}")
    except (BevFuseError, ValidationError, OSError) as e:
        fail(e)
