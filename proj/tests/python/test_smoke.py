"""Smoke tests for the python bindings."""

import os

import numpy as np
import pytest

import geomeld


def test_generate_tile_shapes():
    tile = geomeld.generate_tile("py_tile", height=32, width=32, patch=4, seed=7)
    assert tile.s2.shape == (12, 32, 32)
    assert tile.s1.shape == (4, 32, 32)
    assert tile.dem.shape == (1, 32, 32)
    assert tile.canopy.shape == (1, 32, 32)
    assert tile.dw.shape == (32, 32)
    assert tile.esa.shape == (32, 32)
    assert tile.s2.min() >= 0.0 and tile.s2.max() <= 1.0
    assert tile.canopy.min() >= 0.0
    assert len(tile.caption) > 0
    attrs = tile.attributes
    assert 0 <= attrs["dominant_class"] < 9
    assert attrs["dominant_fraction"] > 0


def test_generation_is_deterministic():
    a = geomeld.generate_tile("det", height=32, width=32, seed=5)
    b = geomeld.generate_tile("det", height=32, width=32, seed=5)
    assert np.array_equal(a.s2, b.s2)
    assert a.caption == b.caption


def test_temporal_anchor_day_fixed():
    seen_years = set()
    for i in range(50):
        y, m, d = geomeld.temporal_anchor(f"anchor_{i}")
        assert d == 15
        assert 2018 <= y <= 2021
        assert 1 <= m <= 12
        seen_years.add(y)
    assert geomeld.temporal_anchor("x") == geomeld.temporal_anchor("x")


def test_masks_disjoint():
    ctx, tgt = geomeld.make_masks(8, 8, ratio=0.70, target_fraction=0.25, seed=3)
    assert len(ctx) == 19
    assert len(tgt) == 16
    assert set(ctx).isdisjoint(tgt)


def test_geomorphon_flat_plane():
    dem = np.full((16, 16), 250.0)
    forms = geomeld.geomorphon_classify(dem, lookup_radius=3)
    assert (forms == 0).all()
    assert geomeld.geomorphon_forms[0] == "flat"


def test_water_consensus():
    dw = np.zeros((8, 8), dtype=np.uint8)  # DW water class is 0
    esa = np.full((8, 8), 7, dtype=np.uint8)  # ESA water class is 7
    _, frac = geomeld.water_consensus(dw, esa)
    assert frac == 1.0


def test_caption_pipeline_and_verifier():
    tile = geomeld.generate_tile("py_caption", height=32, width=32, seed=11)
    audit = geomeld.caption_pipeline(tile)
    assert len(audit["candidates"]) == 4
    assert audit["final_caption"]
    if tile.attributes["water_fraction"] < 0.02:
        out = geomeld.verify_caption(tile, audit["final_caption"] + " near a lake")
        assert len(out["conflicts"]) >= 1
        assert "lake" not in out["caption"]


def test_tile_round_trip(tmp_path):
    tile = geomeld.generate_tile("py_rt", height=32, width=32, seed=13)
    path = str(tmp_path / "tile.gmt")
    tile.save(path)
    back = geomeld.TileSample.load(path)
    assert np.array_equal(back.s2, tile.s2)
    assert back.caption == tile.caption


def test_train_and_evaluate(tmp_path):
    data = tmp_path / "ds"
    data.mkdir()
    (data / "tiles").mkdir()
    lines = []
    for i in range(8):
        tile = geomeld.generate_tile(f"py_train_{i}", height=16, width=16, seed=3)
        rel = f"tiles/py_train_{i}.gmt"
        tile.save(str(data / rel))
        name = geomeld.dw_class_names[tile.attributes["dominant_class"]]
        lines.append(f"py_train_{i}\t{rel}\t{tile.anchor_date}\t{name}")
    manifest = data / "index.tsv"
    manifest.write_text("\n".join(lines) + "\n")

    config = tmp_path / "config.txt"
    config.write_text(
        "\n".join(
            [
                f"manifest={manifest}",
                "max_steps=2",
                "batch_size=4",
                "model.dim=16",
                "model.blocks=1",
                "model.text_dim=16",
                "model.text_blocks=2",
                "model.text_embed_dim=32",
                "model.contrastive_dim=8",
                f"out_dir={tmp_path / 'run'}",
            ]
        )
        + "\n"
    )
    result = geomeld.train(str(config))
    assert result["steps"] == 2
    assert os.path.exists(result["checkpoint"])

    report = geomeld.evaluate(result["checkpoint"], str(manifest), k=2)
    assert 0.0 <= report["recall_image_to_text"] <= 1.0
    assert report["gallery"] == 8
