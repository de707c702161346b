"""``dcaps gen-toy``: write the seeded synthetic polyp dataset."""

from __future__ import annotations

import logging

import click
import yaml

from dcaps.cli._shared import console, parse_size, prepare_output
from dcaps.core.atomic import write_text_atomic
from dcaps.data.toy import POSITIVE_MODES, generate_toy_dataset, write_toy_dataset

GENERATOR_RECORD = "generator.yaml"


@click.command(name="gen-toy")
@click.option("--polyps", type=int, default=100, show_default=True, help="Number of polyps.")
@click.option("--per", "per_polyp", type=int, default=3, show_default=True,
              help="Images per polyp.")
@click.option("--seed", type=int, default=0, show_default=True, help="Generator seed.")
@click.option("--out", "out", required=True, type=click.Path(), help="Output dataset directory.")
@click.option("--size", default="64x80", show_default=True, help="Image size HEIGHTxWIDTH.")
@click.option("--positive", type=click.Choice(POSITIVE_MODES), default="mixed", show_default=True,
              help="Label given to premalignant polyps.")
@click.option("-v", "--verbose", is_flag=True, help="Enable verbose logging.")
def gen_toy(polyps: int, per_polyp: int, seed: int, out: str, size: str, positive: str,
            verbose: bool) -> None:
    """Generate POLYPS × PER toy images plus manifest.csv under OUT."""
    height, width = parse_size(size)
    out_dir = prepare_output(out, None, verbose)
    log = logging.getLogger("dcaps")

    dataset = generate_toy_dataset(polyps, per_polyp, seed, size=(height, width), positive=positive)
    manifest_path = write_toy_dataset(out_dir, dataset)
    write_text_atomic(out_dir / GENERATOR_RECORD, yaml.safe_dump({
        "polyps": polyps,
        "per_polyp": per_polyp,
        "seed": seed,
        "size": [height, width],
        "positive": positive,
    }, sort_keys=True))
    log.debug(f"Generator parameters written to {out_dir / GENERATOR_RECORD}")
    console.print(f"[green]Wrote {len(dataset)} images[/green] and manifest {manifest_path}")
