"""Command-line entry point for backbone export."""

from __future__ import annotations

import click

from . import ExportRequest, ExportError, IMAGENET_MEAN, IMAGENET_STD, export
from .resnet import SUPPORTED_ARCHS


def _triple(text: str, flag: str) -> tuple[float, float, float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise click.BadParameter(f"{flag} expects three values, got '{text}'")
    return tuple(float(p) for p in parts)


@click.command()
@click.option("--arch", type=click.Choice(SUPPORTED_ARCHS), default="resnet50",
              show_default=True, help="Backbone architecture.")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional state-dict checkpoint (wrapper prefixes are normalized).")
@click.option("--out-model", required=True, type=click.Path(dir_okay=False),
              help="Output ONNX path.")
@click.option("--out-meta", type=click.Path(dir_okay=False), default=None,
              help="Output sidecar path (defaults to the model path with .json).")
@click.option("--input-size", default="224x224", show_default=True, help="Input HxW.")
@click.option("--mean", default=" ".join(str(v) for v in IMAGENET_MEAN), show_default=True,
              help="Per-channel normalization mean.")
@click.option("--std", default=" ".join(str(v) for v in IMAGENET_STD), show_default=True,
              help="Per-channel normalization std.")
@click.option("--name", default="", help="Human-readable model name for the sidecar.")
def main(arch, checkpoint, out_model, out_meta, input_size, mean, std, name) -> None:
    """Export a ResNet feature extractor to ONNX + percept-xai sidecar metadata."""
    try:
        h, _, w = input_size.lower().partition("x")
        request = ExportRequest(
            arch=arch,
            checkpoint=checkpoint,
            out_model=out_model,
            out_meta=out_meta,
            input_size=(int(h), int(w)),
            normalization_mean=_triple(mean, "--mean"),
            normalization_std=_triple(std, "--std"),
            name=name,
        )
    except ValueError as exc:
        raise click.ClickException(str(exc))
    try:
        model_path, meta_path = export(request)
    except ExportError as exc:
        raise click.ClickException(str(exc))
    for warning in request.warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(f"wrote {model_path} and {meta_path}")


if __name__ == "__main__":
    main()
