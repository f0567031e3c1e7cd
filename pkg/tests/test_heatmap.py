import json

import numpy as np
import pytest
from PIL import Image

from gbmstrat.errors import ArgumentError
from gbmstrat.heatmap import HeatmapParams, colormap, normalize_scores, render_heatmap
from gbmstrat.tissue_seg import PatchCoord


def test_percentile_rank_and_minmax():
    np.testing.assert_allclose(normalize_scores([0.1, 0.5, 0.2, 0.2]), [0.125, 0.875, 0.5, 0.5])
    np.testing.assert_allclose(normalize_scores([1.0, 3.0, 2.0], "min-max"), [0, 1, 0.5])
    np.testing.assert_allclose(normalize_scores([2.0, 2.0], "min-max"), [0.5, 0.5])
    with pytest.raises(ArgumentError):
        normalize_scores([])


def test_colormap_endpoints_and_midpoints():
    assert colormap(0.0).tolist() == [59, 76, 192]
    assert colormap(1.0).tolist() == [180, 4, 38]
    # halfway between the first two control points, rounded half up
    assert colormap(0.25).tolist() == [140, 149, 207]


def test_params_validation():
    with pytest.raises(ArgumentError):
        HeatmapParams(overlay_alpha=1.5)
    with pytest.raises(ArgumentError):
        HeatmapParams(control_points=((0.0, (0, 0, 0)), (0.9, (1, 1, 1))))


def test_render_blends_footprints(bundle_factory, tmp_path):
    img = np.full((1024, 1024, 3), 100, np.uint8)
    s = bundle_factory(img, (1, 4, 16))
    coords = [PatchCoord(0, 0), PatchCoord(256, 0)]
    out = render_heatmap(s, coords, [0.2, 0.9], out_path=tmp_path / "h.png")
    assert out.shape == (64, 64, 3)
    lo, hi = colormap(0.25).astype(float), colormap(0.75).astype(float)
    np.testing.assert_array_equal(out[0:16, 0:16], np.broadcast_to(np.floor(0.5 * lo + 50 + 0.5), (16, 16, 3)))
    np.testing.assert_array_equal(out[0:16, 16:32], np.broadcast_to(np.floor(0.5 * hi + 50 + 0.5), (16, 16, 3)))
    assert np.all(out[16:, :] == 100)
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "h.png")), out)
    side = json.loads((tmp_path / "h.png.json").read_text())
    assert side["factor"] == 16 and side["n_patches"] == 2


def test_render_length_mismatch(bundle_factory):
    s = bundle_factory(np.zeros((256, 256, 3), np.uint8), (1, 4))
    with pytest.raises(ArgumentError):
        render_heatmap(s, [PatchCoord(0, 0)], [0.1, 0.2])
