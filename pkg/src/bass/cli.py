"""Operator command line: run, sweep, eval, export-triples, mock-serve.

Every flag can also come from a TOML config file (``--config``); precedence
is command line > config file > built-in default.  Exit codes: 0 success,
1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .backend import make_backend
from .errors import BassError, ConfigError
from .mockbackend import MockBackend
from .mockserver import serve_blocking
from .pipeline import run_bass
from .runstore import (
    eval_report,
    export_training_triples,
    read_run,
    write_run,
)
from .sampler import (
    DEFAULT_ALPHA_BAR,
    DEFAULT_BETA_BAR,
    DEFAULT_N,
    DEFAULT_TEMPLATE,
    DEFAULT_THETA,
    FILTER_LITERAL,
    FILTER_QUANTILE,
    PipelineConfig,
)

DEFAULT_BACKEND = "mock:0"
DEFAULT_SWEEP_THETAS = (0.01, 0.02, 0.05, 0.1, float("inf"))
DEFAULT_SWEEP_ALPHA_BARS = (0.0, 0.1, 0.2, 0.3)
DEFAULT_SWEEP_BETA_BARS = (0.0, 0.2, 0.4, 0.6)


class FloatOrInf(click.ParamType):
    name = "float-or-inf"

    def convert(self, value, param, ctx):
        if isinstance(value, (int, float)):
            return float(value)
        if str(value).strip().lower() in ("inf", "+inf", "infinity"):
            return float("inf")
        try:
            return float(value)
        except ValueError:
            self.fail(f"{value!r} is not a number or 'inf'", param, ctx)


def _unit_interval(ctx, param, value):
    if value is not None and not 0.0 <= value <= 1.0:
        raise click.BadParameter(f"{param.name} must lie in [0, 1], got {value}")
    return value


def _non_negative(ctx, param, value):
    if value is not None and value < 0:
        raise click.BadParameter(f"{param.name} must be >= 0, got {value}")
    return value


def _load_toml(path: str) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _merge_config_file(ctx: click.Context, kwargs: dict) -> dict:
    """Fill every flag still at its default from the TOML config file."""

    config_path = kwargs.pop("config", None)
    if not config_path:
        return kwargs
    try:
        data = _load_toml(config_path)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise click.UsageError(f"cannot read config file {config_path}: {exc}")
    for key, value in data.items():
        name = key.replace("-", "_")
        if name not in kwargs:
            continue
        if ctx.get_parameter_source(name) == click.core.ParameterSource.DEFAULT:
            if name == "theta":
                value = FloatOrInf().convert(value, None, None)
            kwargs[name] = value
    return kwargs


def _build_pipeline_config(kwargs: dict) -> PipelineConfig:
    try:
        return PipelineConfig(
            n=kwargs["n"],
            theta=kwargs["theta"],
            alpha_bar=kwargs["alpha_bar"],
            beta_bar=kwargs["beta_bar"],
            seed=kwargs["seed"],
            filter_mode=kwargs["filter_mode"],
            prompt_template=kwargs["template"],
            seed_per_candidate=kwargs["seed_per_candidate"],
        )
    except ConfigError as exc:
        raise click.UsageError(str(exc))


def _make_backend(kwargs: dict):
    return make_backend(
        kwargs["backend"],
        max_inflight=kwargs["max_inflight"],
        cache_dir=kwargs["cache_dir"],
    )


_common_run_options = [
    click.option("--template", default=DEFAULT_TEMPLATE, show_default=True,
                 help="Prompt template with one {} placeholder."),
    click.option("--n", type=click.IntRange(min=1), default=DEFAULT_N,
                 show_default=True, help="Number of swap candidates."),
    click.option("--seed", type=int, default=0, show_default=True,
                 help="Run seed (drives swap set and generation)."),
    click.option("--backend", envvar="BASS_BACKEND_URL", default=DEFAULT_BACKEND,
                 show_default=True, help="Backend endpoint URL or mock:<seed>."),
    click.option("--filter-mode", type=click.Choice([FILTER_QUANTILE, FILTER_LITERAL]),
                 default=FILTER_QUANTILE, show_default=True),
    click.option("--max-inflight", type=click.IntRange(min=1), default=4,
                 show_default=True, help="Max concurrent backend requests."),
    click.option("--seed-per-candidate", is_flag=True, default=False,
                 help="Give each candidate its own generation seed."),
    click.option("--cache-dir", type=click.Path(file_okay=False), default=None,
                 help="Disk cache for backend responses."),
    click.option("--out", type=click.Path(file_okay=False), default="runs",
                 show_default=True, help="Directory for run artifacts."),
    click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
                 help="TOML config file; command line takes precedence."),
]


def _with_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@click.group()
@click.version_option()
def main():
    """Fuse two text concepts into one image via balance swap-sampling."""


@main.command("run")
@click.option("--prompt-a", required=True, help="First concept text.")
@click.option("--prompt-b", required=True, help="Second concept text.")
@click.option("--theta", type=FloatOrInf(), default=DEFAULT_THETA, show_default=True,
              callback=_non_negative, help="Coarse text-balance width (or 'inf').")
@click.option("--alpha-bar", type=float, default=DEFAULT_ALPHA_BAR, show_default=True,
              callback=_unit_interval, help="Fine-filter gap fraction.")
@click.option("--beta-bar", type=float, default=DEFAULT_BETA_BAR, show_default=True,
              callback=_unit_interval, help="Fine-filter sum fraction.")
@_with_options(_common_run_options)
@click.pass_context
def cmd_run(ctx, **kwargs):
    """Run one sampling pipeline and persist the run directory."""

    kwargs = _merge_config_file(ctx, kwargs)
    if not kwargs["prompt_a"] or not kwargs["prompt_b"]:
        raise click.UsageError("prompts must be non-empty")
    config = _build_pipeline_config(kwargs)
    backend = _make_backend(kwargs)
    try:
        manifest = run_bass(kwargs["prompt_a"], kwargs["prompt_b"], config, backend)
        run_dir = write_run(manifest, kwargs["out"])
    except BassError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"run written to {run_dir}")
    if manifest.status != "complete":
        raise click.ClickException(f"run incomplete: {manifest.error}")
    sel = manifest.selection
    click.echo(
        f"selected candidate {sel['selected_id']} from {sel['from_set']} "
        f"(coarse {len(manifest.filters['coarse']['kept_ids'])}, "
        f"fine {len(manifest.filters['fine']['kept_ids'])} of {config.n})"
    )


@main.command("sweep")
@click.option("--prompt-a", required=True)
@click.option("--prompt-b", required=True)
@click.option("--grid-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="TOML file with theta_axis / alpha_bars / beta_bars arrays.")
@_with_options(_common_run_options)
@click.pass_context
def cmd_sweep(ctx, **kwargs):
    """Run the full parameter grid, one run per cell, plus grid CSVs.

    Default grid: a theta axis {0.01, 0.02, 0.05, 0.1, inf} at the default
    (alpha_bar, beta_bar), and a 4x4 (alpha_bar, beta_bar) grid at the
    default theta.
    """

    kwargs = _merge_config_file(ctx, kwargs)
    thetas = list(DEFAULT_SWEEP_THETAS)
    alpha_bars = list(DEFAULT_SWEEP_ALPHA_BARS)
    beta_bars = list(DEFAULT_SWEEP_BETA_BARS)
    if kwargs["grid_file"]:
        grid = _load_toml(kwargs["grid_file"])
        conv = FloatOrInf()
        if "theta_axis" in grid:
            thetas = [conv.convert(v, None, None) for v in grid["theta_axis"]]
        if "alpha_bars" in grid:
            alpha_bars = [float(v) for v in grid["alpha_bars"]]
        if "beta_bars" in grid:
            beta_bars = [float(v) for v in grid["beta_bars"]]

    backend = _make_backend(kwargs)
    out = Path(kwargs["out"])
    out.mkdir(parents=True, exist_ok=True)

    def one_cell(theta, alpha_bar, beta_bar) -> str:
        cell_kwargs = dict(kwargs, theta=theta, alpha_bar=alpha_bar, beta_bar=beta_bar)
        config = _build_pipeline_config(cell_kwargs)
        try:
            manifest = run_bass(kwargs["prompt_a"], kwargs["prompt_b"], config, backend)
            run_dir = write_run(manifest, out)
        except BassError as exc:
            raise click.ClickException(str(exc))
        if manifest.status != "complete":
            raise click.ClickException(f"cell incomplete: {manifest.error}")
        return run_dir.name

    def fmt(v: float) -> str:
        return "inf" if v == float("inf") else f"{v:g}"

    theta_cells = [one_cell(t, DEFAULT_ALPHA_BAR, DEFAULT_BETA_BAR) for t in thetas]
    grid_cells = [
        [one_cell(DEFAULT_THETA, a, b) for b in beta_bars] for a in alpha_bars
    ]

    theta_csv = out / "sweep_theta.csv"
    lines = ["theta," + ",".join(fmt(t) for t in thetas)]
    lines.append("run_dir," + ",".join(theta_cells))
    theta_csv.write_text("\n".join(lines) + "\n")

    grid_csv = out / "sweep_alpha_beta.csv"
    lines = ["alpha_bar\\beta_bar," + ",".join(fmt(b) for b in beta_bars)]
    for a, row in zip(alpha_bars, grid_cells):
        lines.append(fmt(a) + "," + ",".join(row))
    grid_csv.write_text("\n".join(lines) + "\n")

    click.echo(f"{len(thetas) + len(alpha_bars) * len(beta_bars)} cells written to {out}")
    click.echo(f"grid tables: {theta_csv.name}, {grid_csv.name}")


@main.command("eval")
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Also write the table as CSV.")
def cmd_eval(run_dirs, out):
    """Aggregate balance metrics of the selected images across runs."""

    try:
        manifests = [(Path(d).name, read_run(d)) for d in run_dirs]
        report = eval_report(manifests)
    except (BassError, OSError, KeyError, ValueError) as exc:
        raise click.ClickException(f"cannot evaluate runs: {exc}")
    click.echo(report.to_text(), nl=False)
    if out:
        Path(out).write_text(report.to_csv())
        click.echo(f"csv written to {out}")


@main.command("export-triples")
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Output file for the training triples.")
def cmd_export_triples(run_dirs, out):
    """Export (embedding pair, winning swap vector) records for completed runs."""

    try:
        count = export_training_triples(list(run_dirs), out)
    except (BassError, OSError, KeyError, ValueError) as exc:
        raise click.ClickException(f"export failed: {exc}")
    click.echo(f"{count} training triples written to {out}")


@main.command("mock-serve")
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_mock_serve(port, host, seed):
    """Serve the deterministic mock backend over the wire protocol."""

    click.echo(f"serving mock:{seed} on http://{host}:{port}")
    try:
        serve_blocking(MockBackend(seed), port=port, host=host)
    except OSError as exc:
        raise click.ClickException(str(exc))


if __name__ == "__main__":
    sys.exit(main())
