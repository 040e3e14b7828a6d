"""Plain PGM/PPM image files for samples in [-1, 1].

Values map linearly to 0..255 (``round((x + 1) / 2 * 255)``, clipped). One
channel is written as plain graymap (``P2``), three as plain pixmap (``P3``).
The header is ``P2|P3``, a ``# `` comment line, ``width height`` and ``255``,
followed by one image row per text line. PNG output is available when Pillow
is installed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from glod.denoiser.serialization import atomic_write_bytes
from glod.errors import FormatError, InvalidArgumentError

MAXVAL = 255


def to_bytes(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint((img + 1.0) * 0.5 * MAXVAL), 0, MAXVAL).astype(np.uint8)


def from_bytes(px) -> np.ndarray:
    return np.asarray(px, dtype=np.float64) / MAXVAL * 2.0 - 1.0


def encode_pnm(img, comment: str = "glod sample") -> bytes:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise InvalidArgumentError(f"expected an (H, W, 1) or (H, W, 3) image, got {img.shape}")
    H, W, C = img.shape
    px = to_bytes(img)
    lines = ["P2" if C == 1 else "P3", f"# {comment}", f"{W} {H}", str(MAXVAL)]
    lines += [" ".join(str(v) for v in row.reshape(-1)) for row in px]
    return ("\n".join(lines) + "\n").encode("ascii")


def decode_pnm(data: bytes) -> np.ndarray:
    """Parse a plain ``P2``/``P3`` file into an ``(H, W, C)`` array in [-1, 1]."""
    tokens = []
    for line in data.decode("ascii", errors="strict").splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] not in ("P2", "P3"):
        raise FormatError("not a plain PGM/PPM file")
    C = 1 if tokens[0] == "P2" else 3
    try:
        W, H, maxval = (int(v) for v in tokens[1:4])
        vals = np.array([int(v) for v in tokens[4:]], dtype=np.int64)
    except ValueError as e:
        raise FormatError(f"bad PNM token: {e}") from None
    if maxval != MAXVAL:
        raise FormatError(f"unsupported maxval {maxval}")
    if vals.size != H * W * C or vals.min(initial=0) < 0 or vals.max(initial=0) > maxval:
        raise FormatError("PNM pixel data does not match its header")
    return from_bytes(vals.reshape(H, W, C))


def write_pnm(path, img, comment: str = "glod sample"):
    atomic_write_bytes(path, encode_pnm(img, comment))


def read_pnm(path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def png_available() -> bool:
    try:
        import PIL  # noqa: F401
    except ImportError:
        return False
    return True


def write_png(path, img):
    """Write ``img`` as PNG; raises :class:`InvalidArgumentError` without Pillow."""
    try:
        from PIL import Image
    except ImportError:
        raise InvalidArgumentError("PNG output needs Pillow (pip install Pillow)") from None
    import io

    px = to_bytes(img)
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[..., 0]
    buf = io.BytesIO()
    Image.fromarray(px).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
