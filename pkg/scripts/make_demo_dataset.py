#!/usr/bin/env python3
"""Write a tiny synthetic dataset (two-color images) for trying the CLI offline."""
import argparse
import json
import random
from pathlib import Path

from PIL import Image

from satiredecoder.backends.mock import DISTRACTORS, SCENE_VOCABULARY


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("output", type=Path, help="directory to create")
    parser.add_argument("-n", type=int, default=8, help="number of samples")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = random.Random(args.seed)
    images = args.output / "img"
    images.mkdir(parents=True, exist_ok=True)
    vocabulary = sorted(set(SCENE_VOCABULARY) | set(DISTRACTORS))
    lines = [{"type": "metadata", "version": "1", "object_vocabulary": vocabulary}]
    for i in range(args.n):
        left = tuple(rng.randrange(256) for _ in range(3))
        right = tuple(rng.randrange(256) for _ in range(3))
        img = Image.new("RGB", (128, 64), left)
        img.paste(Image.new("RGB", (64, 64), right), (64, 0))
        img.save(images / f"s{i}.png")
        objects = rng.sample(SCENE_VOCABULARY, 3)
        lines.append({
            "id": f"s{i}",
            "image_path": f"img/s{i}.png",
            "gold_objects": objects,
            "gold_description": f"A {objects[0]} next to a {objects[1]} while the {objects[2]} "
                                "is ignored, poking fun at everyday habits.",
        })
    with open(args.output / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line) + "\n")
    print(args.output / "manifest.jsonl")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
