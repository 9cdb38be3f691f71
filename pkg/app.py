# app.py
# Command-line application object; subcommands register themselves on it from qoct/commands

import click

from qoct import __version__
from qoct.toast import generate_toast
from qoct.pipeline import OUTPUT_FORMATS
from qoct.utilities_validation import configure_logging, QOCTError, ConfigError, StageError

# Exit statuses
EXIT_CONFIG_ERROR = 2
EXIT_STAGE_ERROR = 3


class QOCTGroup(click.Group):
    """Group that turns toolkit errors into a notice and the documented exit status."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ConfigError as error:
            generate_toast('error', 'Configuration error', str(error))
            ctx.exit(EXIT_CONFIG_ERROR)
        except StageError as error:
            generate_toast('error', f"Stage '{error.stage}' failed", str(error.cause))
            ctx.exit(EXIT_STAGE_ERROR)
        except QOCTError as error:
            generate_toast('error', 'Processing error', str(error))
            ctx.exit(EXIT_STAGE_ERROR)


@click.group(cls=QOCTGroup)
@click.version_option(__version__, prog_name='qoct')
@click.option('--seed', type=int, default=None, help='Seed for Poisson shot noise.')
@click.option('--grid', 'grid_points', type=int, default=None, help='Grid points per axis.')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default='.', show_default=True,
              help='Directory for every output file.')
@click.option('--format', 'output_format', type=click.Choice(OUTPUT_FORMATS), default='qjs', show_default=True,
              help='Joint-spectrum file format.')
@click.option('--plot', is_flag=True, help='Also write HTML figures.')
@click.option('--verbose', is_flag=True, help='Debug logging.')
@click.pass_context
def app(ctx, seed, grid_points, out_dir, output_format, plot, verbose):
    """Fourier-domain quantum OCT: simulate, acquire, compensate and reconstruct."""
    configure_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, grid_points=grid_points, out_dir=out_dir, output_format=output_format, plot=plot)
