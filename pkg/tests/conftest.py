import io
import json
from pathlib import Path

import pytest
from PIL import Image

from satiredecoder.backends.mock import DISTRACTORS, SCENE_VOCABULARY
from satiredecoder.core import ImageRef, ImageSample

PALETTE = [
    ((200, 30, 30), (30, 30, 200)),
    ((30, 200, 30), (200, 200, 30)),
    ((30, 30, 200), (200, 30, 200)),
    ((200, 200, 30), (30, 200, 200)),
    ((30, 200, 200), (120, 60, 10)),
    ((90, 90, 90), (240, 240, 240)),
    ((10, 120, 60), (60, 10, 120)),
]


def png_bytes(size=(100, 40), left=(255, 0, 0), right=(0, 0, 255)) -> bytes:
    w, h = size
    img = Image.new("RGB", size, left)
    img.paste(Image.new("RGB", (w - w // 2, h), right), (w // 2, 0))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def make_sample(i: int, **kwargs) -> ImageSample:
    left, right = PALETTE[i % len(PALETTE)]
    from satiredecoder.decouple import split_image

    full = ImageRef(f"s{i}", png_bytes(left=left, right=right))
    yes, but = split_image(full)
    defaults = dict(
        gold_description="A person stares at a phone while the dog waits by the door, mocking screen addiction.",
        gold_objects=frozenset({"person", "phone", "dog"}),
        image_full=full,
    )
    defaults.update(kwargs)
    return ImageSample(id=f"s{i}", image_yes=yes, image_but=but, **defaults)


def write_dataset(directory: Path, n: int = 5) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "img").mkdir(exist_ok=True)
    meta = {"type": "metadata", "version": "1", "object_vocabulary": [*SCENE_VOCABULARY, *DISTRACTORS]}
    lines = [json.dumps(meta)]
    for i in range(n):
        left, right = PALETTE[i % len(PALETTE)]
        (directory / "img" / f"s{i}.png").write_bytes(png_bytes(left=left, right=right))
        lines.append(json.dumps({
            "id": f"s{i}",
            "image_path": f"img/s{i}.png",
            "gold_description": "A person stares at a phone while the dog waits by the door, mocking screen addiction.",
            "gold_objects": ["person", "phone", "dog"],
        }))
    path = directory / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


def write_config(directory: Path, dataset: Path, **extra) -> Path:
    doc = {"dataset_path": str(dataset), "output_dir": str(directory / "run"), "parallelism": 2}
    doc.update(extra)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "config.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def dataset_dir(tmp_path):
    return write_dataset(tmp_path / "data")


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
