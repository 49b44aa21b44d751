import json

import click


def debug_echo(debug: bool, message: str) -> None:
    if debug:
        click.echo(message, err=True)


def dumps_json(payload: dict) -> str:
    """Stable JSON text so repeated runs produce byte-identical files."""
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"
