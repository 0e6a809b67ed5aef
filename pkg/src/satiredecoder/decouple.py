"""Visual cascaded decoupling.

The four leaf calls (tag and caption each half) are independent and run
concurrently; the two discrepancy analyses wait for their inputs.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from PIL import Image, UnidentifiedImageError

from .backends.base import ChatBackend, analyze_discrepancy, caption_image, tag_image
from .core import ImageRef, ImageSample, SemanticBundle
from .errors import AgentError, DecodeError, InvalidInput


@dataclass(frozen=True)
class SplitRule:
    axis: str = "vertical"
    position: float = 0.5

    def __post_init__(self) -> None:
        if self.axis != "vertical":
            raise InvalidInput("only vertical splits are supported")
        if not 0.0 < self.position < 1.0:
            raise InvalidInput(f"split position {self.position} must lie in (0, 1)")


def _open(image: ImageRef) -> Image.Image:
    try:
        img = Image.open(io.BytesIO(image.data))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"image {image.id!r} is not a decodable raster image") from exc
    return img


def _png(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def split_image(image: ImageRef, rule: SplitRule = SplitRule()) -> tuple[ImageRef, ImageRef]:
    """Cut into left (yes) and right (but) parts; the left width is floored."""
    img = _open(image)
    width, height = img.size
    cut = int(width * rule.position)
    if cut < 1 or cut >= width:
        raise InvalidInput(f"image {image.id!r} of width {width} is too narrow to split")
    left = img.crop((0, 0, cut, height))
    right = img.crop((cut, 0, width, height))
    base = image.id
    return (
        ImageRef(f"{base}:yes", _png(left), "image/png"),
        ImageRef(f"{base}:but", _png(right), "image/png"),
    )


def join_halves(yes: ImageRef, but: ImageRef, image_id: str) -> ImageRef:
    """Place the halves side by side (used when only halves are available)."""
    left, right = _open(yes), _open(but)
    height = max(left.height, right.height)
    canvas = Image.new("RGB", (left.width + right.width, height), "white")
    canvas.paste(left.convert("RGB"), (0, 0))
    canvas.paste(right.convert("RGB"), (left.width, 0))
    return ImageRef(image_id, _png(canvas), "image/png")


def image_size(image: ImageRef) -> tuple[int, int]:
    return _open(image).size


def full_image(sample: ImageSample) -> ImageRef:
    if sample.image_full is not None:
        return sample.image_full
    return join_halves(sample.image_yes, sample.image_but, sample.id)


def decouple(
    sample: ImageSample,
    tagger: ChatBackend,
    captioner: ChatBackend,
    analyzer: ChatBackend,
    *,
    parallelism: int = 4,
) -> SemanticBundle:
    """Produce the six-field bundle for one sample.

    Errors are re-raised as :class:`AgentError` naming the failing role and
    half; nothing partial is returned.
    """
    halves = {"yes": sample.image_yes, "but": sample.image_but}

    def run(role: str, half: str, fn, *args):
        try:
            return fn(*args)
        except Exception as exc:
            raise AgentError(f"{role} failed: {exc}", role=role, half=half, sample_id=sample.id) from exc

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        tags = {h: pool.submit(run, "tagger", h, tag_image, tagger, img) for h, img in halves.items()}
        caps = {h: pool.submit(run, "captioner", h, caption_image, captioner, img) for h, img in halves.items()}
        le_yes, le_but = tags["yes"].result(), tags["but"].result()
        # local analysis can start while captions are still in flight
        d_local = pool.submit(run, "analyzer", None, analyze_discrepancy, analyzer,
                              le_yes.render(), le_but.render(), "local")
        gs_yes, gs_but = caps["yes"].result(), caps["but"].result()
        d_global = pool.submit(run, "analyzer", None, analyze_discrepancy, analyzer,
                               gs_yes.text, gs_but.text, "global")
        return SemanticBundle(
            le_yes=le_yes,
            le_but=le_but,
            gs_yes=gs_yes,
            gs_but=gs_but,
            d_local=d_local.result(),
            d_global=d_global.result(),
        )
