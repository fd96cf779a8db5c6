import pytest

from digisem import cli, pipeline
from digisem.config import Config

SMALL = {
    "frontend.height": 8, "frontend.width": 8, "frontend.channels": 64, "frontend.gamma_c": 4,
    "frontend.gamma_s": 4.0, "frontend.codec_fit_maps": 8,
    "converter.M": 4, "converter.N": 16, "converter.L": 4, "converter.anchors": 64,
    "converter.train_steps": 40, "converter.maps_per_step": 8,
    "uan.train_frames": 300, "uan.epochs": 30, "uan.batch_size": 128,
    "sweep.trials": 4,
}


@pytest.fixture(scope="session")
def small_cfg():
    return Config(SMALL)


@pytest.fixture(scope="session")
def small_system(small_cfg):
    return pipeline.build_system(small_cfg)


@pytest.fixture(scope="session")
def trained_dir(tmp_path_factory):
    """Default-config converter and UAN trained through the command line."""
    out = tmp_path_factory.mktemp("artifacts")
    assert cli.main(["train-converter", "--output", str(out)]) == 0
    assert cli.main(["train-uan", "--output", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def trained_system(trained_dir):
    return pipeline.load_system(Config(), trained_dir)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the assertion still decides the test."""
    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}" + (f": {detail}" if detail else "")
        _VERDICTS.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
