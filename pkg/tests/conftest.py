import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("artifact", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("artifact")


def _natural(name, size):
    from skimage import data, transform
    img = getattr(data, name)()
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    img = img[..., :3].astype(np.float64) / 255.0
    if size is not None:
        img = transform.resize(img, (size, size), anti_aliasing=True)
    return img


@pytest.fixture(scope="session")
def natural_images():
    """Small RGB test images in [0, 1]."""
    return {name: _natural(name, 96) for name in ("astronaut", "chelsea", "coffee", "rocket")}


@pytest.fixture(scope="session")
def full_size_images():
    return {name: _natural(name, None) for name in ("astronaut", "chelsea")}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _train_toy(directory):
    from powconv.cnn import synthetic_images, train_cnn
    from powconv.config import default_config
    from powconv.deform import write_ppm
    x, y = synthetic_images(300, 21, 3)
    x = x[..., :16, :16] / 255.0
    cfg = default_config("CnnTrain").with_overrides(
        variant="in1", epochs=6, batch_size=32, out=directory / "train", data={"widths": "4,6,8"})
    result = train_cnn(cfg, (x, y, x[:50], y[:50]))
    corpus = directory / "corpus"
    xt, yt = synthetic_images(24, 21, 3, draw=1)
    for i, (img, label) in enumerate(zip(xt[..., :16, :16] / 255.0, yt)):
        dest = corpus / str(int(label)) / f"{i:03d}.ppm"
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_ppm(dest, img.transpose(1, 2, 0))
    return result.checkpoint, corpus


@pytest.fixture(scope="session")
def toy_model(tmp_path_factory):
    """``(checkpoint_dir, corpus_dir)`` for a small trained 3-class CNN on 16x16 images."""
    return _train_toy(tmp_path_factory.mktemp("toy"))


_VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """``verdict(label, ok, detail)`` prints one PASS/FAIL line, then asserts ``ok``."""
    def record(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
