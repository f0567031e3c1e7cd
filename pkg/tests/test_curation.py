import json

import numpy as np
import pytest

from gbmstrat.colorops import rgb_to_eosin_intensity, rgb_to_hsv
from gbmstrat.curation import (
    CurationParams,
    curate,
    evaluate_patch,
    filter_hsv_artifact,
    filter_pen_marking,
    filter_rgb_background,
    read_report,
)
from gbmstrat.tissue_seg import PatchCoord

N = 256 * 256
TISSUE = (200, 120, 140)
WHITE = (255, 255, 255)
GLASS = (235, 228, 232)
PEN = (200, 10, 120)


def patch_with(color, count, base=TISSUE):
    flat = np.empty((N, 3), np.uint8)
    flat[:] = base
    flat[:count] = color
    return flat.reshape(256, 256, 3)


def test_probe_colours_qualify_only_where_intended():
    p = CurationParams()
    hsv = rgb_to_hsv(np.array([TISSUE, GLASS, PEN], np.uint8))
    e = rgb_to_eosin_intensity(np.array([TISSUE, GLASS, PEN], np.uint8))
    assert hsv[0, 1] > p.hsv_s_max and e[0] > p.eosin_max
    assert hsv[1, 1] <= p.hsv_s_max and hsv[1, 2] >= p.hsv_v_min and min(GLASS) < p.white_min
    assert e[1] > p.eosin_max
    assert e[2] <= p.eosin_max and hsv[2, 1] > p.hsv_s_max


@pytest.mark.parametrize("color,frac,reason", [
    (WHITE, 0.60, "rgb_background"), ((0, 0, 0), 0.60, "rgb_background"),
    (GLASS, 0.95, "hsv_artifact"), (PEN, 0.80, "pen_marking"),
])
def test_threshold_boundaries(color, frac, reason):
    at = int(np.floor(frac * N))  # largest count not above the fraction
    kept, _ = evaluate_patch(patch_with(color, at))
    over, _ = evaluate_patch(patch_with(color, at + 1))
    assert kept is None
    assert over == reason


def test_exact_fraction_on_small_patch():
    tiny = np.empty((100, 3), np.uint8)
    tiny[:] = TISSUE
    tiny[:60] = WHITE
    assert filter_rgb_background(tiny.reshape(10, 10, 3))[0]
    tiny[60] = WHITE
    assert not filter_rgb_background(tiny.reshape(10, 10, 3))[0]


def test_filter_order_reports_first_failing_filter():
    # white pixels also satisfy the hsv rule; background must win
    reason, fr = evaluate_patch(patch_with(WHITE, N))
    assert reason == "rgb_background" and fr["hsv_frac"] is None


def test_fractions_reported():
    reason, fr = evaluate_patch(patch_with(PEN, N // 2))
    assert reason is None
    assert fr["white_black_frac"] == 0.0 and fr["eosin_low_frac"] == 0.5


def test_custom_thresholds():
    p = CurationParams(background_max_frac=0.1)
    assert not filter_rgb_background(patch_with(WHITE, N // 5), p)[0]
    assert filter_hsv_artifact(patch_with(GLASS, N // 5), p)[0]
    assert filter_pen_marking(patch_with(PEN, N // 5), p)[0]


def test_params_load_section(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text("[curation]\nwhite_min = 220\n")
    assert CurationParams.load(f).white_min == 220


def test_curate_demo_slide_and_report_roundtrip(tmp_path):
    from gbmstrat.fixtures import demo_slide
    from gbmstrat.tissue_seg import enumerate_patches, segment_tissue

    slide = demo_slide(tmp_path / "s")
    coords = enumerate_patches(segment_tissue(slide), slide)
    report = curate(slide, coords, threads=2)
    reasons = [r.reject_reason for r in report.records]
    assert reasons.count("pen_marking") == 2 and reasons.count("hsv_artifact") == 1
    assert report.to_jsonl() == curate(slide, coords, threads=1).to_jsonl()
    report.write(tmp_path / "r.jsonl")
    again = read_report(tmp_path / "r.jsonl")
    assert again.kept_coords == report.kept_coords
    assert json.loads((tmp_path / "r.jsonl").read_text().splitlines()[0])["n_patches"] == len(coords)


def test_unreadable_patch_is_recorded(disc_slide):
    report = curate(disc_slide, [PatchCoord(4096, 0)])
    assert report.records[0].reject_reason == "read_error" and not report.records[0].kept
