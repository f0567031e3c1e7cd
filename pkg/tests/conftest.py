import numpy as np
import pytest

from gbmstrat.slide_io import build_pyramid

DISC_CENTER = (1024, 1024)
DISC_RADIUS = 700
DISC_RGB = (200, 120, 140)
GLASS_RGB = (250, 250, 250)


def disc_image(size=2048, center=DISC_CENTER, radius=DISC_RADIUS, hole=None):
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[...] = GLASS_RGB
    inside = (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius ** 2
    img[inside] = DISC_RGB
    if hole is not None:
        (hx, hy), hr = hole
        img[(xx - hx) ** 2 + (yy - hy) ** 2 <= hr ** 2] = GLASS_RGB
    return img


@pytest.fixture
def bundle_factory(tmp_path):
    counter = {"n": 0}

    def make(img, factors=(1, 4, 16), objective_power=20, mpp=0.5, slide_id=None):
        counter["n"] += 1
        sid = slide_id or f"slide-{counter['n']}"
        return build_pyramid(img, list(factors), sid, tmp_path / sid, objective_power, mpp)

    return make


@pytest.fixture(scope="session")
def disc_slide(tmp_path_factory):
    root = tmp_path_factory.mktemp("disc")
    return build_pyramid(disc_image(), [1, 4, 16], "disc", root / "disc", 20, 0.5)


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    """Record one PASS/FAIL line for the acceptance summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
