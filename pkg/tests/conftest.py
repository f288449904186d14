import numpy as np
import pytest
from scipy import ndimage


def textured(h=96, w=96, seed=0, sigma=1.5):
    """Smooth random texture in [0, 1] with plenty of corners."""
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((h, w)), sigma)
    img -= img.min()
    return img / img.max()


def shifted(img, dx, dy):
    """``out(x, y) = img(x - dx, y - dy)`` for integer shifts; exposed border is edge-padded."""
    out = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
    if dy > 0:
        out[:dy] = out[dy]
    elif dy < 0:
        out[dy:] = out[dy - 1]
    if dx > 0:
        out[:, :dx] = out[:, dx : dx + 1]
    elif dx < 0:
        out[:, dx:] = out[:, dx - 1 : dx]
    return out


@pytest.fixture
def texture():
    return textured()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
