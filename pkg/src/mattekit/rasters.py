"""Raster file formats and the on-disk dataset layout.

Alphas and masks are single-channel PNGs; alphas default to 16 bits because
the partition-of-unity checks downstream are tighter than 8-bit quantization.
Per-image instance mattes live in ``<root>/<name>/instance_<k>.<ext>`` with
contiguous numbering from 00.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .compositing import Layer, LayeredScene
from .core import AlphaPlane, BinaryMask, InstanceMatteSet

MAX_CODE = {8: 255, 16: 65535}
_INSTANCE_RE = re.compile(r"^instance_(\d+)$")


class RasterError(ValueError):
    """A raster file could not be read or violates the layout."""


def _open_array(path: Path) -> tuple[np.ndarray, int]:
    """Load a single-channel raster and the maximum code of its bit depth."""
    try:
        with Image.open(path) as img:
            img.load()
            arr = np.asarray(img)
    except Exception as exc:
        raise RasterError(f"cannot read raster {path}: {exc}") from exc
    if arr.ndim == 3:
        # Accept accidental RGB exports of grayscale data.
        if arr.shape[2] >= 3 and not (arr[..., :1] == arr[..., 1:3]).all():
            raise RasterError(f"{path} is not single-channel")
        arr = arr[..., 0]
    if arr.dtype == np.uint8:
        return arr.astype(np.int64), 255
    if arr.dtype == np.uint16:
        return arr.astype(np.int64), 65535
    if arr.dtype == np.int32:  # PIL mode "I" for 16-bit PNGs
        return arr.astype(np.int64), 65535
    if arr.dtype == np.bool_:
        return arr.astype(np.int64), 1
    raise RasterError(f"unsupported raster dtype {arr.dtype} in {path}")


def read_alpha_codes(path: Path) -> tuple[np.ndarray, int]:
    """Integer alpha codes plus the code of full opacity."""
    codes, max_code = _open_array(Path(path))
    if codes.min() < 0 or codes.max() > max_code:
        raise RasterError(f"{path} holds codes outside [0, {max_code}]")
    return codes, max_code


def read_alpha(path: Path) -> AlphaPlane:
    """Alpha plane normalized by the file's maximum code value."""
    codes, max_code = read_alpha_codes(path)
    return AlphaPlane(codes / max_code)


def write_alpha(path: Path, plane: AlphaPlane | None = None, bit_depth: int = 16, codes: np.ndarray | None = None) -> None:
    """Write an alpha plane (or precomputed integer codes) as a grayscale PNG."""
    max_code = MAX_CODE[bit_depth]
    if codes is None:
        if plane is None:
            raise ValueError("need a plane or explicit codes")
        codes = np.rint(plane.values * max_code).astype(np.int64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    Image.fromarray(codes.astype(dtype)).save(path)


def read_mask(path: Path) -> BinaryMask:
    codes, _ = _open_array(Path(path))
    return BinaryMask(codes > 0)


def write_mask(path: Path, mask: BinaryMask) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask.bits, 255, 0).astype(np.uint8)).save(path)


def read_color(path: Path) -> np.ndarray:
    """Color plane in [0, 1]: (H, W) for grayscale files, (H, W, 3) for RGB."""
    try:
        with Image.open(path) as img:
            img.load()
            arr = np.asarray(img)
    except Exception as exc:
        raise RasterError(f"cannot read raster {path}: {exc}") from exc
    if arr.ndim == 3:
        if arr.shape[2] > 3:
            arr = arr[..., :3]
        scale = 255 if arr.dtype == np.uint8 else 65535
        return arr.astype(np.float64) / scale
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255
    return arr.astype(np.float64) / 65535


def write_color(path: Path, values: np.ndarray, bit_depth: int = 16) -> None:
    """Write a color plane; RGB data always goes out at 8 bits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 3:
        Image.fromarray(np.rint(values * 255).astype(np.uint8)).save(path)
        return
    max_code = MAX_CODE[bit_depth]
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    Image.fromarray(np.rint(values * max_code).astype(dtype)).save(path)


def partitioned_alpha_codes(stack: np.ndarray, max_code: int) -> tuple[np.ndarray, np.ndarray]:
    """Quantize effective alphas so the coded layers still partition unity.

    Independent rounding can push the per-pixel code sum above full opacity;
    where that happens, codes with the largest upward rounding residual are
    decremented, keeping every value within one code of the exact alpha. The
    background code is then the exact integer complement.
    """
    ideal = stack * max_code
    codes = np.rint(ideal).astype(np.int64)
    excess = codes.sum(axis=0) - max_code
    while (excess > 0).any():
        residual = np.where(codes >= 1, codes - ideal, -np.inf)
        residual[:, excess <= 0] = -np.inf
        pick = residual.argmax(axis=0)
        take = (np.arange(stack.shape[0])[:, None, None] == pick[None]) & (excess > 0)[None]
        codes[take] -= 1
        excess = codes.sum(axis=0) - max_code
    return codes, max_code - codes.sum(axis=0)


@dataclass(frozen=True)
class SceneFiles:
    """A composed scene re-read from disk (quantized values)."""

    name: str
    effective: InstanceMatteSet
    background_alpha: AlphaPlane
    composite: np.ndarray
    layers: tuple[Layer, ...]
    background_color: np.ndarray


def instance_files(image_dir: Path) -> list[Path]:
    """Instance mattes of one image, validated to be numbered 00, 01, ..."""
    image_dir = Path(image_dir)
    found = {}
    for path in image_dir.iterdir():
        match = _INSTANCE_RE.match(path.stem)
        if match:
            found[int(match.group(1))] = path
    ordered = [found[k] for k in sorted(found)]
    if sorted(found) != list(range(len(found))):
        raise RasterError(f"{image_dir}: instance files must be numbered contiguously from 00, got {sorted(found)}")
    return ordered


def read_instance_set(image_dir: Path) -> InstanceMatteSet:
    files = instance_files(image_dir)
    return InstanceMatteSet.from_planes([read_alpha(p) for p in files], ids=range(len(files)))


def image_names(root: Path) -> list[str]:
    """Sorted per-image directory names under an alphas-style root."""
    root = Path(root)
    if not root.is_dir():
        raise RasterError(f"no such directory: {root}")
    return sorted(p.name for p in root.iterdir() if p.is_dir())


def resolve_alphas_root(root: Path) -> Path:
    """Accept either a dataset root (with an alphas/ child) or the alphas dir itself."""
    root = Path(root)
    child = root / "alphas"
    return child if child.is_dir() else root


def write_scene(scene: LayeredScene, root: Path, name: str, bit_depth: int = 16) -> dict:
    """Write composite, effective alphas, and raw layers; returns a manifest entry.

    Effective alphas are quantized jointly (see ``partitioned_alpha_codes``)
    and the background plane is their exact complement in code space.
    """
    root = Path(root)
    max_code = MAX_CODE[bit_depth]
    write_color(root / "images" / f"{name}.png", scene.composite, bit_depth)

    placements = []
    if len(scene.effective):
        codes, bg_codes = partitioned_alpha_codes(scene.effective.stacked(), max_code)
    else:
        codes = np.zeros((0, *scene.background.shape), dtype=np.int64)
        bg_codes = np.full(scene.background.shape, max_code, dtype=np.int64)
    alpha_dir = root / "alphas" / name
    for k in range(codes.shape[0]):
        write_alpha(alpha_dir / f"instance_{k:02d}.png", bit_depth=bit_depth, codes=codes[k])
    write_alpha(alpha_dir / "background.png", bit_depth=bit_depth, codes=bg_codes)

    layer_dir = root / "layers" / name
    write_color(layer_dir / "background_color.png", scene.background.color, bit_depth)
    for k, layer in enumerate(scene.foregrounds):
        write_color(layer_dir / f"foreground_{k:02d}_color.png", layer.color, bit_depth)
        write_alpha(layer_dir / f"foreground_{k:02d}_alpha.png", layer.alpha, bit_depth)
        support = np.argwhere(layer.alpha.values > 0)
        if support.size:
            (top, left), (bottom, right) = support.min(axis=0), support.max(axis=0)
            placements.append({"top": int(top), "left": int(left), "height": int(bottom - top + 1), "width": int(right - left + 1)})
        else:
            placements.append(None)
    return {"name": name, "instances": codes.shape[0], "bit_depth": bit_depth, "placements": placements}


def read_scene(root: Path, name: str) -> SceneFiles:
    root = Path(root)
    alpha_dir = root / "alphas" / name
    effective = read_instance_set(alpha_dir)
    bg_path = alpha_dir / "background.png"
    if bg_path.exists():
        background_alpha = read_alpha(bg_path)
    else:
        total = effective.stacked().sum(axis=0) if len(effective) else 0.0
        background_alpha = AlphaPlane(np.clip(1.0 - total, 0.0, 1.0))
    composite = read_color(root / "images" / f"{name}.png")
    layer_dir = root / "layers" / name
    layers = []
    k = 0
    while (layer_dir / f"foreground_{k:02d}_color.png").exists():
        layers.append(
            Layer(
                read_color(layer_dir / f"foreground_{k:02d}_color.png"),
                read_alpha(layer_dir / f"foreground_{k:02d}_alpha.png"),
            )
        )
        k += 1
    background_color = read_color(layer_dir / "background_color.png")
    return SceneFiles(name, effective, background_alpha, composite, tuple(layers), background_color)
