# index.py
# CLI entry point

from app import app

import qoct.commands  # noqa: F401  registers the subcommands

if __name__ == '__main__':
    app(prog_name='qoct')
