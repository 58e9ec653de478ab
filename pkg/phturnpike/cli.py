import logging

import click

from . import runner
from .config import Config, configure_logging

logger = logging.getLogger(__name__)


@click.group()
@click.option('--log-level', default=None, help="Override PHTURNPIKE_LOG_LEVEL (DEBUG, INFO, ...)")
def main(log_level):
    """Minimum energy supply and turnpike experiments for port-Hamiltonian systems."""
    configure_logging(log_level)
    if not Config.validate():
        logger.warning("Invalid environment settings, continuing with defaults where possible")


@main.command()
@click.argument('config', type=click.Path(dir_okay=False))
@click.option('--out', 'out', type=click.Path(file_okay=False), default=None,
              help="Output directory (default: output.dir from the config)")
@click.option('--jobs', type=int, default=None, help="Horizons solved in parallel")
@click.pass_context
def run(ctx, config, out, jobs):
    """Solve every horizon in CONFIG and write CSV files and report.json."""
    if jobs is not None and jobs < 1:
        raise click.BadParameter("must be at least 1", param_hint='--jobs')
    ctx.exit(runner.run(config, out=out, jobs=jobs))


@main.command()
@click.argument('config', type=click.Path(dir_okay=False))
@click.pass_context
def verify(ctx, config):
    """Run the structural and numerical checks for CONFIG."""
    ctx.exit(runner.verify(config, echo=click.echo))


if __name__ == '__main__':
    main()
