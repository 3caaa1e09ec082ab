from pathlib import Path
from typing import Tuple

import click

from bevfuse.commands.common import fail
from bevfuse.errors import BevFuseError
from bevfuse.services.render_service import render_service


@click.command("render")
@click.option("--type", "kind", required=True, help="grid | mask | overlay")
@click.argument("inputs", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output .pgm (grid, mask) or .ppm (overlay)")
def render(kind: str, inputs: Tuple[str, ...], out: str):
    """
    Render a grid, mask or overlay

    grid: .npy/.pgm amplitudes stretched to 0..255. mask: 0/255 binary.
    overlay PRED GT: red = prediction, green = ground truth.
    """
    try:
        path = render_service.render(kind, [Path(p) for p in inputs], Path(out))
        click.echo(f"✅ {path}")
    except (BevFuseError, OSError) as e:
        fail(e)
