"""File-backend fixture export with all-or-nothing semantics."""

import os
import shutil
from pathlib import Path

from nasseg import tensorio
from nasseg.oracle import OracleHandle, export_store


def export_fixture(oracle: OracleHandle, images_dir, out_dir) -> list[str]:
    """Export every PNG under ``images_dir`` as a file-backend store.

    Writes activations at all five depths plus logits per image. The store
    is built in a temporary sibling directory and moved into place only on
    success, so a failure never leaves a half-written ``out_dir`` behind.
    Returns the exported image ids (sorted).
    """
    images_dir = Path(images_dir)
    paths = sorted(images_dir.glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no .png images under {images_dir}")
    h, w, _ = oracle.meta.input_size

    out = Path(out_dir)
    tmp = out.parent / f".{out.name}.partial.{os.getpid()}"
    shutil.rmtree(tmp, ignore_errors=True)
    try:
        images = {p.stem: tensorio.read_image_png(p) for p in paths}
        for image_id, img in images.items():
            if img.shape != (h, w, 3):
                raise ValueError(
                    f"{image_id}: expected a {h}x{w} image for "
                    f"{oracle.meta.input_size}, got {img.shape[:2]}"
                )
        export_store(oracle, images, tmp)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)
    return sorted(images)
