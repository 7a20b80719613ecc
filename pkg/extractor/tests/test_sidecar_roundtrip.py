"""Sidecar acceptance: exported files must interoperate with the engine.

These tests validate the sidecar's output by loading it with the primary
engine package (``cirque``), which must be installed alongside.
"""

import json

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

cirque_store = pytest.importorskip("cirque.store", reason="engine package not installed")

from cirque_extractor.cli import main as extract_main


@pytest.fixture()
def image_dir(tmp_path):
    root = tmp_path / "imgs"
    root.mkdir()
    rng = np.random.default_rng(9)
    for name in ("alpha", "beta", "gamma"):
        arr = rng.integers(0, 255, size=(50, 64, 3), dtype=np.uint8)
        Image.fromarray(arr).save(root / f"{name}.png")
    # same pixels under a second name: embeddings must agree
    twin = np.asarray(Image.open(root / "alpha.png"))
    Image.fromarray(twin).save(root / "alpha_twin.png")
    return root


def test_sidecar_round_trip(image_dir, tmp_path):
    runner = CliRunner()
    img_out = tmp_path / "gallery.sqemb"
    result = runner.invoke(extract_main, [
        "images", "--checkpoint", "toy:64",
        "--input", str(image_dir), "--output", str(img_out),
        "--batch-size", "2",
    ])
    assert result.exit_code == 0, result.output

    texts_in = tmp_path / "texts.jsonl"
    texts_in.write_text(
        "\n".join(
            json.dumps({"id": f"q{i}", "text": f"a scene with {i} objects"})
            for i in range(4)
        )
    )
    txt_out = tmp_path / "texts.sqemb"
    result = runner.invoke(extract_main, [
        "texts", "--checkpoint", "toy:64",
        "--input", str(texts_in), "--output", str(txt_out),
    ])
    assert result.exit_code == 0, result.output

    # the engine loads both files and they satisfy every store invariant
    gallery = cirque_store.load_index(img_out)
    texts = cirque_store.load_index(txt_out)
    assert gallery.dim == texts.dim == 64
    assert len(gallery) == 4 and len(texts) == 4
    assert gallery.ids == sorted(gallery.ids)  # load order = sorted file order
    assert len(set(gallery.ids)) == len(gallery.ids)
    assert np.isfinite(gallery.matrix).all()

    for _, emb in gallery:
        unit = cirque_store.normalize(emb)
        assert abs(float(np.linalg.norm(unit)) - 1.0) < 1e-5
        assert cirque_store.cosine(emb, unit) >= 1.0 - 1e-6

    # a duplicated image encodes to (essentially) the same direction
    twin_cos = cirque_store.cosine(
        gallery.embedding("alpha"), gallery.embedding("alpha_twin")
    )
    assert twin_cos >= 0.999

    # byte-exact format contract: engine rewrite reproduces the sidecar file
    copy = tmp_path / "copy.sqemb"
    cirque_store.write_index(gallery, copy)
    assert copy.read_bytes() == img_out.read_bytes()
    print("[acceptance] sidecar round-trip: PASS")
