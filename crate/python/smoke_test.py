"""Smoke test for the zoomprop Python bindings.

Build and install first:  maturin develop -m crates/py/Cargo.toml
"""

import math
import os
import tempfile

import zoomprop as zp


def main():
    a = zp.BBox(0, 0, 100, 100)
    b = zp.BBox(50, 0, 150, 100)
    assert math.isclose(zp.iou(a, b), 1 / 3)
    assert zp.classify_overlap_pattern(a, a) == 12
    assert zp.classify_overlap_pattern(a, zp.BBox(500, 500, 510, 510)) is None
    d = zp.roi_relative_corners(a, b)
    back = zp.apply_deltas(a, d)
    assert all(math.isclose(u, v) for u, v in zip(back.corners(), b.corners()))
    try:
        zp.BBox(10, 0, 5, 5)
    except ValueError:
        pass
    else:
        raise AssertionError("degenerate box accepted")

    assert len(zp.coarse_windows(2400, 1800)) == 287
    assert len(zp.cover_regions(2400, 1800)) == 70

    labels = zp.make_labels(a, [zp.BBox(10, 10, 20, 20)])
    assert labels["zoom_label"] and labels["pattern"] is None

    scene = zp.gen_scene(7, "demo", 800, 600)
    feat = zp.render_features(scene, channels=8, stride=16.0, seed=1)
    c, h, w = feat.shape
    assert (c, h, w) == (8, 38, 50), feat.shape
    pooled = feat.roi_pool(zp.BBox(0, 0, 400, 300), 4)
    assert len(pooled) == c * 16

    model = zp.ScNetModel.init(c * 16, hidden_dim=32, seed=3)
    out = model.forward(pooled)
    assert 0.0 <= out["zoom"] <= 1.0 and len(out["confidences"]) == zp.PATTERN_COUNT

    with tempfile.TemporaryDirectory() as tmp:
        fp, mp = os.path.join(tmp, "f.fimg"), os.path.join(tmp, "m.scnt")
        feat.save(fp)
        model.save(mp)
        assert zp.FeatureImage.load(fp).data() == feat.data()
        # weights are stored as f32, so compare after one round trip
        loaded = zp.ScNetModel.load(mp)
        assert math.isclose(loaded.forward(pooled)["zoom"], out["zoom"], rel_tol=1e-4)
        loaded.save(mp)
        assert zp.ScNetModel.load(mp).forward(pooled) == loaded.forward(pooled)
        try:
            zp.FeatureImage.load(os.path.join(tmp, "missing"))
        except IOError:
            pass
        else:
            raise AssertionError("missing file loaded")

    props, counters = zp.propose(feat, 800, 600, model, strategy="zoom")
    dense, dense_counters = zp.propose(feat, 800, 600, model, strategy="dense")
    assert counters["rois_pooled"] <= dense_counters["rois_pooled"]
    boxes = [p[0] for p in props]
    r = zp.recall(boxes, scene.boxes)
    assert 0.0 <= r <= 1.0
    print(f"{scene!r}: {len(props)} zoom proposals, {len(dense)} dense, recall {r:.3f}")
    print(f"counters zoom {counters} dense {dense_counters}")
    print("smoke test ok")


if __name__ == "__main__":
    main()
