"""Operator surface: explain images, batch datasets, compare encoders.

Outputs per component are (a) a raw map file -- an 8-byte header of two
little-endian uint32 dims (height, width) followed by row-major float32
values -- (b) a colormapped PNG overlay, and (c) a JSON run summary. Raw
files keep un-normalized values; only the overlay applies per-map min-max
scaling for display.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import click
import matplotlib
import numpy as np
from PIL import Image

from . import agreement as agreement_mod
from . import engine
from .encoder import EncoderError, load_encoder, toy_encoders
from .imgproc import as_image, resize_bicubic
from .masks import MaskConfig

_MAP_SUFFIX = ".fmap"
_IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

__all__ = ["main", "write_map_file", "read_map_file", "render_overlay", "load_image"]


# ---------------------------------------------------------------------------
# raw map files


def write_map_file(path, values: np.ndarray) -> None:
    """Write an (H, W) map as dims header + row-major little-endian float32."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {values.shape}")
    height, width = values.shape
    with open(path, "wb") as handle:
        handle.write(struct.pack("<II", height, width))
        handle.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_map_file(path) -> np.ndarray:
    """Read back a raw map file written by write_map_file."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise ValueError(f"'{path}' is too short to be a raw map file")
    height, width = struct.unpack("<II", blob[:8])
    expected = 8 + 4 * height * width
    if len(blob) != expected:
        raise ValueError(f"'{path}': expected {expected} bytes for {height}x{width}, got {len(blob)}")
    return np.frombuffer(blob[8:], dtype="<f4").reshape(height, width).copy()


# ---------------------------------------------------------------------------
# images and rendering


def load_image(path) -> np.ndarray:
    """Load an image file as an (H, W, 3) float array in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0


def save_png(path, rgb01: np.ndarray) -> None:
    data = (np.clip(rgb01, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def normalize_for_display(values: np.ndarray) -> np.ndarray:
    """Per-map min-max scaling to [0, 1]; a flat map maps to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    span = values.max() - values.min()
    if span <= 0:
        return np.zeros_like(values)
    return (values - values.min()) / span


def render_overlay(
    map_values: np.ndarray, image: np.ndarray, colormap: str = "jet", alpha: float = 0.5
) -> np.ndarray:
    """Alpha-blend a colormapped map (high=red, low=blue for jet) over an image."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    image = as_image(image)
    if map_values.shape != image.shape[:2]:
        map_values = resize_bicubic(
            np.asarray(map_values, dtype=np.float64), image.shape[0], image.shape[1]
        )
    try:
        cmap = matplotlib.colormaps[colormap]
    except KeyError:
        raise ValueError(f"unknown colormap '{colormap}'") from None
    heat = np.asarray(cmap(normalize_for_display(map_values)))[:, :, :3]
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    return alpha * heat + (1.0 - alpha) * image


# ---------------------------------------------------------------------------
# manifest plumbing


@dataclass
class RunManifest:
    """Everything one run needs; built from flags > config file > defaults."""

    model: str
    meta: str | None
    components: tuple[str, ...]
    mask_config: MaskConfig
    normalize: str
    sampler: str
    mode: str
    out_dir: Path
    colormap: str
    alpha: float
    input_size: tuple[int, int]
    threads: int | None
    canny_low: float
    canny_high: float
    blur_sigma: float
    overlay_original: bool = False


def _parse_pair(text: str, flag: str) -> tuple[int, int]:
    try:
        a, _, b = text.lower().partition("x")
        return int(a), int(b)
    except ValueError:
        raise click.BadParameter(f"{flag} expects ROWSxCOLS, got '{text}'") from None


def _parse_components(text: str) -> tuple[str, ...]:
    parts = tuple(p.strip() for p in text.split(",") if p.strip())
    unknown = set(parts) - set(engine.COMPONENTS)
    if not parts or unknown:
        raise click.BadParameter(
            f"components must be a comma list from {engine.COMPONENTS}, got '{text}'"
        )
    return parts


def _merged(ctx: click.Context, config_path) -> dict:
    """Apply precedence: command-line flags > config file values > defaults."""
    params = dict(ctx.params)
    if not config_path:
        return params
    try:
        overrides = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"cannot read config file '{config_path}': {exc}")
    for key, value in overrides.items():
        name = key.replace("-", "_")
        if name not in params:
            raise click.ClickException(f"config file sets unknown option '{key}'")
        source = ctx.get_parameter_source(name)
        if source is not None and source.name != "COMMANDLINE":
            params[name] = value
    return params


def _build_manifest(params: dict) -> RunManifest:
    rows, cols = _parse_pair(str(params["grid"]), "--grid")
    try:
        mask_config = MaskConfig(
            cell_rows=rows,
            cell_cols=cols,
            keep_prob=float(params["keep_prob"]),
            num_masks=int(params["num_masks"]),
            upsample_factor=params["upsample_factor"],
            upsample=str(params["upsample"]),
            seed=int(params["seed"]),
        )
    except ValueError as exc:
        raise click.ClickException(str(exc))
    model = params.get("model") or ",".join(params.get("models", ()))
    return RunManifest(
        model=str(model),
        meta=params["meta"],
        components=_parse_components(str(params["components"])),
        mask_config=mask_config,
        normalize=str(params["normalize"]),
        sampler=str(params["sampler"]),
        mode=str(params["mode"]),
        out_dir=Path(params["out"]),
        colormap=str(params["colormap"]),
        alpha=float(params["alpha"]),
        input_size=_parse_pair(str(params["input_size"]), "--input-size"),
        threads=params["threads"],
        canny_low=float(params["canny_low"]),
        canny_high=float(params["canny_high"]),
        blur_sigma=float(params["blur_sigma"]),
        overlay_original=bool(params.get("overlay_original", False)),
    )


def _common_options(fn):
    options = [
        click.option("--meta", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="Sidecar metadata JSON (defaults to the model path with .json)."),
        click.option("--components", default=",".join(engine.COMPONENTS), show_default=True,
                     help="Comma list of maps to compute."),
        click.option("--num-masks", default=8000, show_default=True, help="Masks sampled per map."),
        click.option("--grid", default="7x7", show_default=True, help="Low-res mask grid ROWSxCOLS."),
        click.option("--keep-prob", default=0.5, show_default=True, help="Per-cell keep probability."),
        click.option("--seed", default=0, show_default=True, help="Mask stream seed."),
        click.option("--mode", type=click.Choice(agreement_mod.MODES), default="pearson",
                     show_default=True, help="Agreement scoring mode."),
        click.option("--normalize", type=click.Choice(engine.NORMALIZE_MODES), default="eq2",
                     show_default=True, help="Map estimator normalization."),
        click.option("--sampler", type=click.Choice(engine.SAMPLERS), default="monte-carlo",
                     show_default=True, help="Mask source: sampled stream or exact enumeration."),
        click.option("--upsample", type=click.Choice(["bicubic", "nearest"]), default="bicubic",
                     show_default=True, help="Mask upsampling mode."),
        click.option("--out", default="percept-out", show_default=True,
                     type=click.Path(file_okay=False), help="Output directory."),
        click.option("--colormap", default="jet", show_default=True, help="Overlay colormap."),
        click.option("--alpha", default=0.5, show_default=True, type=click.FloatRange(0.0, 1.0),
                     help="Overlay blend weight."),
        click.option("--input-size", default="224x224", show_default=True,
                     help="Analysis size HxW (toy encoders only; models use their sidecar)."),
        click.option("--upsample-factor", type=int, default=None,
                     help="Mask upsample factor (default: smallest with crop slack)."),
        click.option("--threads", type=int, default=None,
                     help=f"Worker threads (bounded by ${engine.THREADS_ENV_VAR})."),
        click.option("--canny-low", default=0.1, show_default=True, help="Canny low threshold."),
        click.option("--canny-high", default=0.2, show_default=True, help="Canny high threshold."),
        click.option("--blur-sigma", default=5.0, show_default=True,
                     help="Gaussian sigma for texture removal."),
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     default=None, help="JSON config file; flags override its values."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _load_manifest_encoder(manifest: RunManifest, model: str):
    try:
        return load_encoder(model, meta=manifest.meta, input_size=manifest.input_size)
    except EncoderError as exc:
        raise click.ClickException(str(exc))


def _prepare_input(path, size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Load an image and resize it to the encoder input size."""
    try:
        original = load_image(path)
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot read image '{path}': {exc}")
    return original, resize_bicubic(original, size[0], size[1])


def _run_explain(manifest: RunManifest, encoder, image: np.ndarray) -> engine.RunReport:
    return engine.explain_image(
        encoder,
        image,
        manifest.mask_config,
        components=manifest.components,
        normalize=manifest.normalize,
        sampler=manifest.sampler,
        threads=manifest.threads,
        canny_low=manifest.canny_low,
        canny_high=manifest.canny_high,
        blur_sigma=manifest.blur_sigma,
    )


def _summary_payload(manifest: RunManifest, report: engine.RunReport) -> dict:
    config = manifest.mask_config
    return {
        "encoder": report.encoder_id,
        "seed": config.seed,
        "num_masks": config.num_masks,
        "keep_prob": config.keep_prob,
        "grid": [config.cell_rows, config.cell_cols],
        "normalize": manifest.normalize,
        "components": list(report.maps),
        "timings_s": {k: round(v, 4) for k, v in report.timings_s.items()},
        "wall_time_s": round(report.wall_time_s, 4),
        "degenerate": [k for k, m in report.maps.items() if m.degenerate],
    }


# ---------------------------------------------------------------------------
# commands


@click.group()
def main() -> None:
    """Pixel-level color / shape / texture importance maps for image encoders."""


@main.command()
@click.option("--model", required=True, help="Toy encoder name or ONNX model path.")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Image to explain.")
@_common_options
@click.option("--overlay-original", is_flag=True,
              help="Render overlays at the original image resolution.")
@click.pass_context
def explain(ctx: click.Context, **_kw) -> None:
    """Explain one image: raw maps, PNG overlays, and a run summary."""
    params = _merged(ctx, ctx.params.get("config_path"))
    manifest = _build_manifest(params)
    encoder = _load_manifest_encoder(manifest, params["model"])
    original, resized = _prepare_input(params["image_path"], encoder.spec.input_size)

    report = _run_explain(manifest, encoder, resized)
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    for component, imap in report.maps.items():
        write_map_file(manifest.out_dir / f"{component}{_MAP_SUFFIX}", imap.values)
        backdrop = original if manifest.overlay_original else resized
        overlay = render_overlay(imap.values, backdrop, manifest.colormap, manifest.alpha)
        save_png(manifest.out_dir / f"{component}_overlay.png", overlay)
    payload = _summary_payload(manifest, report)
    payload["image"] = str(params["image_path"])
    (manifest.out_dir / "summary.json").write_text(json.dumps(payload, indent=2))
    click.echo(f"wrote {len(report.maps)} map(s) to {manifest.out_dir}")


def _image_files(directory: Path) -> list[Path]:
    return sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in _IMAGE_EXTENSIONS
    )


@main.command()
@click.option("--model", required=True, help="Toy encoder name or ONNX model path.")
@click.option("--images-dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of images to score.")
@click.option("--dump-maps", is_flag=True, help="Also write per-image raw maps.")
@_common_options
@click.pass_context
def batch(ctx: click.Context, **_kw) -> None:
    """Score a directory of images and write an agreement CSV."""
    params = _merged(ctx, ctx.params.get("config_path"))
    manifest = _build_manifest(params)
    files = _image_files(Path(params["images_dir"]))
    if not files:
        raise click.ClickException(f"no images found in '{params['images_dir']}'")
    # agreement needs the overall map plus every component
    manifest.components = tuple(engine.COMPONENTS)
    encoder = _load_manifest_encoder(manifest, params["model"])

    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = manifest.out_dir / "agreement.csv"
    reports: list[agreement_mod.AgreementReport] = []
    # Rows are flushed one by one so an interrupted run keeps partial results.
    with open(csv_path, "w", newline="") as handle:
        handle.write(",".join(("image_id", "color", "shape", "texture", "mode")) + "\n")
        handle.flush()
        for position, path in enumerate(files, start=1):
            try:
                _original, resized = _prepare_input(path, encoder.spec.input_size)
            except click.ClickException as exc:
                click.echo(f"[{position}/{len(files)}] {path.name}: skipped ({exc.message})", err=True)
                continue
            report = _run_explain(manifest, encoder, resized)
            scored = agreement_mod.score_maps(report.maps, manifest.mode, image_id=path.name)
            reports.append(scored)
            handle.write(
                f"{scored.image_id},{scored.color:.6f},{scored.shape:.6f},"
                f"{scored.texture:.6f},{scored.mode}\n"
            )
            handle.flush()
            if params["dump_maps"]:
                map_dir = manifest.out_dir / path.stem
                map_dir.mkdir(exist_ok=True)
                for component, imap in report.maps.items():
                    write_map_file(map_dir / f"{component}{_MAP_SUFFIX}", imap.values)
            click.echo(f"[{position}/{len(files)}] {path.name}: ok", err=True)
        if not reports:
            raise click.ClickException("no readable images; nothing scored")
        footer = agreement_mod.aggregate(reports)
        handle.write(
            f"{footer.image_id},{footer.color:.6f},{footer.shape:.6f},"
            f"{footer.texture:.6f},{footer.mode}\n"
        )
    click.echo(f"scored {len(reports)} image(s); wrote {csv_path}")


@main.command()
@click.option("--model", "models", required=True, multiple=True,
              help="Encoder to compare (repeat the flag; toy name or model path).")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Image to explain under every encoder.")
@_common_options
@click.pass_context
def compare(ctx: click.Context, **_kw) -> None:
    """Side-by-side overlay grid (rows=models, cols=components) plus score CSV."""
    params = _merged(ctx, ctx.params.get("config_path"))
    manifest = _build_manifest(params)
    models = params["models"]
    if len(models) < 2:
        raise click.ClickException("compare needs at least two --model values")

    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    reports = []
    for model in models:
        encoder = _load_manifest_encoder(manifest, model)
        _original, resized = _prepare_input(params["image_path"], encoder.spec.input_size)
        report = _run_explain(manifest, encoder, resized)
        cells = [
            render_overlay(report.maps[c].values, resized, manifest.colormap, manifest.alpha)
            for c in manifest.components
        ]
        rows.append(np.concatenate(cells, axis=1))
        if set(engine.COMPONENTS) <= set(report.maps):
            scored = agreement_mod.score_maps(report.maps, manifest.mode, image_id=encoder.identity)
            reports.append(scored)
        click.echo(f"{encoder.identity}: done", err=True)

    heights = {row.shape[0] for row in rows}
    if len(heights) > 1:  # encoders may use different input sizes
        target_h = min(heights)
        rows = [
            row if row.shape[0] == target_h
            else resize_bicubic(row, target_h, int(row.shape[1] * target_h / row.shape[0]))
            for row in rows
        ]
        widths = {row.shape[1] for row in rows}
        if len(widths) > 1:
            target_w = min(widths)
            rows = [row[:, :target_w] for row in rows]
    grid = np.concatenate(rows, axis=0)
    save_png(manifest.out_dir / "compare.png", grid)
    if reports:
        agreement_mod.write_csv(manifest.out_dir / "compare.csv", reports, include_aggregate=False)
    click.echo(f"wrote comparison grid for {len(models)} encoder(s) to {manifest.out_dir}")


@main.command()
def toys() -> None:
    """List the built-in toy encoders."""
    for name, description in toy_encoders().items():
        click.echo(f"{name:14s} {description}")


@main.command()
def version() -> None:
    """Print the package version."""
    try:
        click.echo(metadata.version("percept-xai"))
    except metadata.PackageNotFoundError:
        click.echo("unknown (package not installed)")


if __name__ == "__main__":
    main()
