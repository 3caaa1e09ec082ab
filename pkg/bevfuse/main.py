import logging

import click

from bevfuse.commands.evaluate import evaluate
from bevfuse.commands.map_uls import map_uls
from bevfuse.commands.render import render
from bevfuse.commands.simulate import simulate
from bevfuse.commands.train import train
from bevfuse.config import settings

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str = None) -> None:
    logging.basicConfig(level=(level or settings.LOG_LEVEL).upper(), format=LOG_FORMAT, force=True)


@click.group()
@click.option("--log-level", default=None, help="Overrides BEVFUSE_LOG_LEVEL")
@click.version_option("1.0.0", prog_name="bevfuse")
def cli(log_level: str):
    """bevfuse - fisheye camera and ultrasonic BEV obstacle perception"""
    setup_logging(log_level)
    logging.getLogger(__name__).debug("📍 Environment: %s, threads: %d", settings.ENVIRONMENT, settings.THREADS)


# Include commands
cli.add_command(simulate)
cli.add_command(map_uls)
cli.add_command(train)
cli.add_command(evaluate)
cli.add_command(render)


if __name__ == "__main__":
    cli()
