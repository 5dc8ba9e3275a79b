"""``qsl`` command line.

Exit codes: 0 when every verdict passes, 2 when any verdict fails, 1 on
operational errors (bad config, missing inputs, usage mistakes).
"""

from __future__ import annotations

import json
import logging
import dataclasses
import os
import sys
from pathlib import Path

import click

from ..exceptions import QSLError
from .calibration import calibrate_constants
from .config import load_config
from .experiments import CLAIMS, REGISTRY, default_k
from .suite import EXIT_ERROR, EXIT_OK, emit_report, run_suite, summary_text


def pool_size(config_threads: int) -> int:
    env = os.environ.get("QSL_THREADS")
    if env is None or env.strip() == "":
        return config_threads
    try:
        n = int(env)
    except ValueError:
        raise QSLError(f"QSL_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise QSLError(f"QSL_THREADS must be a positive integer, got {env!r}")
    return n


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool) -> None:
    """Berezin-Toeplitz quantization lab."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Suite config file.")
@click.option("--output", type=click.Path(file_okay=False), default=None, help="Override the output directory.")
def run(config_path: str, output) -> int:
    """Run the experiments listed in a config."""
    suite = load_config(config_path, default_k)
    if heavy_from_env():
        exps = tuple(dataclasses.replace(e, heavy=True) for e in suite.experiments)
        suite = dataclasses.replace(suite, experiments=exps, heavy=True)
    result = run_suite(suite, pool_size(suite.threads), Path(output) if output else None)
    click.echo(summary_text(result), nl=False)
    click.echo(f"artifacts in {result.output}")
    return result.exit_code


def heavy_from_env() -> bool:
    return os.environ.get("QSL_HEAVY", "").strip() not in ("", "0")


def calibration_ks(kmax: int) -> tuple:
    ks = []
    k = 32
    while k <= kmax:
        ks.append(k)
        k *= 2
    if not ks:
        raise QSLError(f"--kmax must be at least 32, got {kmax}")
    return tuple(ks)


@cli.command()
@click.option("--kmax", required=True, type=int, help="Largest k; the sweep is 32, 64, ... up to kmax.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the constants as JSON.")
def calibrate(kmax: int, out) -> int:
    """Calibrate alpha, beta, gamma on the default battery."""
    rec = calibrate_constants(calibration_ks(kmax))
    payload = {**rec.as_dict(), "ks": list(rec.ks), "battery_hash": rec.battery_hash}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    click.echo(text)
    return EXIT_OK


@cli.command()
@click.option("--dir", "directory", required=True, type=click.Path(file_okay=False), help="Results directory of a previous run.")
def report(directory: str) -> int:
    """Summarize a results directory and write plot data."""
    click.echo(emit_report(directory), nl=False)
    return EXIT_OK


@cli.command("list")
def list_cmd() -> int:
    """List registered experiments and the checks they cover."""
    for eid, exp in REGISTRY.items():
        checks = ", ".join(f"{CLAIMS[c].check}:{c}" for c in exp.claims)
        flag = " (heavy, opt-in)" if exp.heavy else ""
        click.echo(f"{eid}{flag}")
        click.echo(f"    k = {', '.join(map(str, exp.default_k))}")
        click.echo(f"    checks {checks}")
        if exp.description:
            click.echo(f"    {exp.description}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        code = cli.main(args=argv, prog_name="qsl", standalone_mode=False)
    except click.exceptions.Exit as exc:
        code = exc.exit_code
    except click.ClickException as exc:
        exc.show()
        code = EXIT_ERROR
    except click.Abort:
        code = EXIT_ERROR
    except QSLError as exc:
        click.echo(f"error: {exc}", err=True)
        code = EXIT_ERROR
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
