import csv
import subprocess
import sys
from pathlib import Path

from satiredecoder.dataset import load_manifest

from conftest import png_bytes

SCRIPT = Path(__file__).resolve().parents[1] / "scripts" / "convert_to_manifest.py"


def test_csv_conversion(tmp_path):
    (tmp_path / "imgs").mkdir()
    (tmp_path / "imgs" / "a.png").write_bytes(png_bytes())
    src = tmp_path / "ann.csv"
    with src.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "image", "overall_description", "objects"])
        w.writerow(["b2", "imgs/a.png", "A phone steals the view.", "phone; person"])
        w.writerow(["a1", "imgs/a.png", "A dog waits.", "dog"])
    out = tmp_path / "out" / "manifest.jsonl"
    proc = subprocess.run([sys.executable, str(SCRIPT), str(src), str(out), "--objects-field", "objects",
                           "--vocabulary", "robot"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    m = load_manifest(out)
    assert [s.id for s in m.samples] == ["a1", "b2"]
    assert m.samples[1].gold_objects == {"phone", "person"}
    assert "robot" in m.object_vocabulary


def test_missing_image_fails_validation(tmp_path):
    src = tmp_path / "ann.jsonl"
    src.write_text('{"id": "x", "image": "missing.png"}\n')
    proc = subprocess.run([sys.executable, str(SCRIPT), str(src), str(tmp_path / "m.jsonl")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "missing.png" in proc.stderr


def test_demo_dataset_loads(tmp_path):
    script = SCRIPT.parent / "make_demo_dataset.py"
    proc = subprocess.run([sys.executable, str(script), str(tmp_path / "demo"), "-n", "3"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    manifest = load_manifest(tmp_path / "demo" / "manifest.jsonl")
    assert [s.id for s in manifest.samples] == ["s0", "s1", "s2"]
    assert all(len(s.gold_objects) == 3 for s in manifest.samples)
