"""Convert a CSV or JSONL annotation export into a satiredecoder manifest.

Images are not copied; their paths are rewritten relative to the output
manifest. Column names are configurable so any export layout can be mapped:

    python3 scripts/convert_to_manifest.py annotations.csv out/manifest.jsonl \
        --image-root images/ --id-field id --image-field image \
        --description-field overall_description --objects-field objects

A source row may instead name the two halves with --yes-field/--but-field.
Object lists are split on --objects-sep (default ";"). The written manifest
is loaded back once to validate it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from satiredecoder.dataset import MANIFEST_VERSION, load_manifest
from satiredecoder.errors import SatireDecoderError


def read_rows(path: Path) -> list[dict]:
    if path.suffix.lower() in (".jsonl", ".ndjson"):
        with path.open(encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
    with path.open(encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def convert(args: argparse.Namespace) -> int:
    src, out = Path(args.source), Path(args.output)
    root = Path(args.image_root) if args.image_root else src.parent
    out.parent.mkdir(parents=True, exist_ok=True)

    def rel(value: str) -> str:
        return os.path.relpath((root / value).resolve(), out.parent.resolve())

    lines = [json.dumps({"type": "metadata", "version": MANIFEST_VERSION,
                         "object_vocabulary": sorted(set(args.vocabulary or []))})]
    for i, row in enumerate(read_rows(src), 1):
        sid = str(row.get(args.id_field) or "").strip()
        if not sid:
            print(f"error: row {i} has no {args.id_field!r}", file=sys.stderr)
            return 1
        entry: dict = {"type": "sample", "id": sid}
        if args.yes_field and args.but_field:
            entry["yes_path"] = rel(row[args.yes_field])
            entry["but_path"] = rel(row[args.but_field])
        else:
            entry["image_path"] = rel(row[args.image_field])
        if args.description_field and row.get(args.description_field):
            entry["gold_description"] = str(row[args.description_field])
        if args.objects_field and row.get(args.objects_field):
            objects = row[args.objects_field]
            if isinstance(objects, str):
                objects = [o.strip() for o in objects.split(args.objects_sep)]
            entry["gold_objects"] = [o for o in objects if o]
        lines.append(json.dumps(entry, ensure_ascii=False))
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")

    try:
        manifest = load_manifest(out)
    except SatireDecoderError as exc:
        print(f"error: converted manifest does not validate: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(manifest.samples)} samples to {out}")
    return 0


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("source", help="CSV or JSONL file, one row per image")
    p.add_argument("output", help="manifest.jsonl to write")
    p.add_argument("--image-root", help="directory image paths are relative to (default: source's directory)")
    p.add_argument("--id-field", default="id")
    p.add_argument("--image-field", default="image")
    p.add_argument("--yes-field")
    p.add_argument("--but-field")
    p.add_argument("--description-field", default="overall_description")
    p.add_argument("--objects-field")
    p.add_argument("--objects-sep", default=";")
    p.add_argument("--vocabulary", nargs="*", help="extra object names counted as CHAIR mentions")
    return convert(p.parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
