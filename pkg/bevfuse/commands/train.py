from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from bevfuse.commands.common import MODES, SPLITS, config_options, fail, load_config
from bevfuse.errors import BevFuseError
from bevfuse.services.storage_service import storage_service
from bevfuse.services.training_service import Trainer, training_service


@click.command("train")
@config_options
@click.option("--mode", type=click.Choice(MODES), default=None, help="Input modalities")
@click.option("--split", type=click.Choice(SPLITS), default="train", show_default=True)
@click.option("--seed", type=int, default=None, help="Initialisation and shuffling seed")
@click.option("--epochs", type=click.IntRange(min=1), default=None)
@click.option("--batch", type=click.IntRange(min=1), default=None)
@click.option("--lr", type=float, default=None)
@click.option("--fusion", type=click.Choice(["camfuse", "concat"]), default=None)
@click.option("--loss", type=click.Choice(["cce", "bce", "dice", "mse"]), default=None)
@click.option("--data", type=click.Path(file_okay=False), default=None, help="Dataset root (default: config dataset_root)")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Run directory (default: config output_root)")
def train(
    config_path: Optional[str],
    preset: Optional[str],
    mode: Optional[str],
    split: str,
    seed: Optional[int],
    epochs: Optional[int],
    batch: Optional[int],
    lr: Optional[float],
    fusion: Optional[str],
    loss: Optional[str],
    data: Optional[str],
    out: Optional[str],
):
    """
    Train a network on a generated dataset

    Writes <mode>.bvf (checkpoint), <mode>_loss.csv (epoch, loss, tau) and
    the effective run configuration to the run directory.
    """
    try:
        config = load_config(
            config_path,
            preset,
            mode=mode,
            seed=seed,
            epochs=epochs,
            batch=batch,
            lr=lr,
            fusion=fusion,
            loss=loss,
            dataset_root=data,
            output_root=out,
        )
        out_dir = Path(config.output_root)
        samples = training_service.load_split(config, split)
        trainer = Trainer(config, storage_service.config_calibration(config), out_dir)
        result = trainer.fit(samples)
        storage_service.write_json(out_dir / f"{config.network.mode.value}_config.json", config.to_dict())
        click.echo(f"✅ loss {result.losses[0]:.6f} -> {result.losses[-1]:.6f}")
        click.echo(f"📁 checkpoint {result.checkpoint}")
        click.echo(f"📁 loss log {result.loss_log}")
    except (BevFuseError, ValidationError, OSError) as e:
        fail(e)
