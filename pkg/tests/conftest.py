import numpy as np
import pytest

from mtlaffect.data import SynthSpec, load_dataset, synth_generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth_small")
    spec = SynthSpec(videos=8, frames=40, frames_spread=0.5, feature_dims=(("a", 5), ("b", 3)), seed=3)
    return synth_generate(spec, out)


@pytest.fixture(scope="session")
def small_dataset(small_manifest):
    return load_dataset(small_manifest)


@pytest.fixture(scope="session")
def default_synth(tmp_path_factory):
    """The generator's default dataset (50 videos x 200 frames), split 40 / 10."""
    from _util import desk_split
    ds = load_dataset(synth_generate(SynthSpec(), tmp_path_factory.mktemp("synth_default")))
    return desk_split(ds)


@pytest.fixture(scope="session")
def valence_run(default_synth):
    from _util import desk_schedule, desk_spec
    from mtlaffect.training import fit
    train, val = default_synth
    return fit(desk_spec(("V",), train.input_dim), train, val, desk_schedule(), seed=0)


def pytest_terminal_summary(terminalreporter):
    from _util import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
