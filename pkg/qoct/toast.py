# toast.py
import click

# Colours per notice type, mirroring the success/error/warning toast classes
TOAST_COLORS = {
    'success': 'green',
    'error': 'red',
    'warning': 'yellow',
}


def generate_toast(toast_type, header, message):
    """
    Prints a short styled notice on stderr for the user of the CLI.

    Parameters:
    - toast_type (str): 'success', 'error' or 'warning'.
    - header (str): Bold first part of the notice.
    - message (str): Notice body.

    Returns:
    - str: The plain text that was printed, handy for tests.
    """
    color = TOAST_COLORS.get(toast_type, 'white')
    text = f"{header}: {message}"
    click.secho(header + ':', fg=color, bold=True, err=True, nl=False)
    click.secho(' ' + message, fg=color, err=True)
    return text
