"""Sidecar entry point: load the model bundle and serve the wire protocol."""

from __future__ import annotations

import click
import uvicorn

from .app import DEFAULT_DROP_MASK_FRACTION, create_app
from .models import ModelLoadError, load_bundle


@click.group()
def main():
    """Model-serving sidecar for the balance swap-sampling engine."""


@main.command("serve")
@click.option("--port", type=int, default=8100, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--device", default="cpu", show_default=True,
              help="Device for the torch bundle (cpu, cuda, cuda:0, ...).")
@click.option("--models", "models_spec", default="stub:0", show_default=True,
              help="Bundle spec: stub, stub:<seed>, torch, or a JSON config path.")
@click.option("--drop-mask-fraction", type=float, default=DEFAULT_DROP_MASK_FRACTION,
              show_default=True,
              help="Segmentation masks covering more than this fraction of the "
                   "image are treated as background and dropped.")
def cmd_serve(port, host, device, models_spec, drop_mask_fraction):
    """Start the service; refuses to start if the models cannot be loaded."""

    try:
        bundle = load_bundle(models_spec, device=device)
    except ModelLoadError as exc:
        raise click.ClickException(f"refusing to start: {exc}")
    click.echo(
        f"serving {bundle.identity} on http://{host}:{port} "
        f"(h={bundle.h}, w={bundle.w}, d={bundle.d})"
    )
    app = create_app(bundle, drop_mask_fraction=drop_mask_fraction)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
