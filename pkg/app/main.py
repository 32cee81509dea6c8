import logging
import sys
from typing import Optional, Sequence

import click
from pydantic import ValidationError

from app.api import data, inference, training
from app.core.config import settings
from app.core.errors import OccReidError, ValidationFailure
from app.core.version import version_string

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


@click.group(
    help="""
Occluded-frame reconstruction and person re-identification.

Synthetic data, five training entry points (detector, Conv-LSTM,
autoencoder, cGAN, Siamese), detection-gated reconstruction, manifest
evaluation and the end-to-end benchmark. Every command that trains or
evaluates writes a run directory under runs/<timestamp>-<seed>/.
"""
)
@click.version_option(version_string(), prog_name="occreid")
@click.option("--log-level", default=None, help="Override OCCREID_LOG_LEVEL")
def cli(log_level: Optional[str]):
    logging.basicConfig(level=(log_level or settings.LOG_LEVEL).upper(),
                        format='%(asctime)s - %(levelname)s - %(message)s')
    logger.info("occreid %s", version_string())


# Register subcommands
cli.add_command(data.synth_data)
cli.add_command(training.train_detector)
cli.add_command(training.train_convlstm)
cli.add_command(training.train_autoencoder)
cli.add_command(training.train_cgan)
cli.add_command(training.train_siamese)
cli.add_command(inference.reconstruct)
cli.add_command(inference.evaluate)
cli.add_command(inference.benchmark)


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand and map the outcome to an exit code:
    0 on success, 1 for usage and validation failures, 2 for everything else.
    """
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="occreid",
                          standalone_mode=False)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return EXIT_VALIDATION
    except click.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_RUNTIME
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return EXIT_VALIDATION
    except (ValidationFailure, ValidationError) as exc:
        logger.error("%s", exc)
        click.echo(f"Error: {exc}", err=True)
        return EXIT_VALIDATION
    except OccReidError as exc:
        logger.error("%s", exc)
        click.echo(f"Error: {exc}", err=True)
        return EXIT_RUNTIME
    except Exception as exc:
        logger.exception("Unexpected failure")
        click.echo(f"Error: {exc}", err=True)
        return EXIT_RUNTIME
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(cli_main())
