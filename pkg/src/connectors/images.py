"""
Image loading for multimodal requests.

Images are read lazily, optionally downscaled, and inlined as base64 data
URLs. The digest covers the exact bytes that go on the wire so prompt
digests stay stable across runs.
"""

import base64
import io
import logging
import mimetypes
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import aiofiles
from PIL import Image

from ..core.answers import image_digest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImagePayload:
    """One image as it is sent to an endpoint"""
    url: str
    digest: str
    b64: Optional[str] = None

    @property
    def inline(self) -> bool:
        return self.b64 is not None


def is_remote(ref: str) -> bool:
    return ref.startswith(("http://", "https://"))


def downscale(payload: bytes, max_side: int) -> bytes:
    """Shrink so the longer side is at most max_side; small images pass through"""
    with Image.open(io.BytesIO(payload)) as img:
        if max(img.size) <= max_side:
            return payload
        scale = max_side / max(img.size)
        size = (max(1, round(img.width * scale)), max(1, round(img.height * scale)))
        resized = img.convert("RGB").resize(size, Image.LANCZOS)
        buffer = io.BytesIO()
        resized.save(buffer, format="PNG")
        logger.debug(f"Downscaled image from {img.size} to {size}")
        return buffer.getvalue()


def encode_bytes(payload: bytes, mime: str = "image/png") -> ImagePayload:
    b64 = base64.b64encode(payload).decode("ascii")
    return ImagePayload(url=f"data:{mime};base64,{b64}", digest=image_digest(payload), b64=b64)


async def load_image(ref: Union[str, Path], max_side: Optional[int] = None) -> ImagePayload:
    """Read an image reference into a request payload"""
    ref = str(ref)
    if is_remote(ref):
        return ImagePayload(url=ref, digest=image_digest(ref.encode("utf-8")))

    async with aiofiles.open(ref, "rb") as f:
        payload = await f.read()

    mime = mimetypes.guess_type(ref)[0] or "image/png"
    if max_side is not None:
        shrunk = downscale(payload, max_side)
        if shrunk is not payload:
            payload, mime = shrunk, "image/png"
    return encode_bytes(payload, mime)


def decode_data_url(url: str) -> bytes:
    """Bytes carried by a base64 data URL"""
    if not url.startswith("data:") or ";base64," not in url:
        raise ValueError("not a base64 data URL")
    return base64.b64decode(url.split(";base64,", 1)[1])
