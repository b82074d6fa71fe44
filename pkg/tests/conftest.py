import numpy as np
import pytest

from pilotprune.channel import ChannelConfig, generate_dataset
from pilotprune.evaluation import scheme_specs, scheme_train_config
from pilotprune.model import ModelConfig
from pilotprune.pruning import PruneConfig
from pilotprune.training import TrainConfig, train

# shared desk setup for the acceptance and ordering checks
DESK = ChannelConfig(n_antennas=8, n_subcarriers=32, n_paths=4)
DESK_L = 4
DESK_WIDTH = 16
RANGE_STEPS = 6000
SCHEME_STEPS = 6000
SNR_RANGE = (-5.0, 10.0)
SNR_GRID = (-5.0, 0.0, 10.0)

VERDICTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line and fail the test on FAIL."""

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        VERDICTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(VERDICTS):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_data():
    return generate_dataset(DESK, 5000, "train", 1), generate_dataset(DESK, 500, "test", 1)


class ModelCache:
    """Trains each named desk model once per session."""

    KINDS = {
        "dp": dict(mode="dp"),
        "sp": dict(mode="sp"),
        "dp-attn": dict(mode="dp", attention=True),
        "fft-attn": dict(mode="fft", attention=True),
        "dp-s25": dict(mode="dp", sparsity=0.25),
    }

    def __init__(self, train_set):
        self.train_set = train_set
        self.graphs = {}

    def config(self, kind):
        spec = dict(self.KINDS[kind])
        sparsity = spec.pop("sparsity", 0.0)
        model = ModelConfig(DESK.n_antennas, DESK.n_subcarriers, DESK_L, conv_width=DESK_WIDTH, **spec)
        prune = PruneConfig(sparsity, 1e-6, RANGE_STEPS) if sparsity else None
        return TrainConfig(model=model, steps=RANGE_STEPS, batch=32, snr_range=SNR_RANGE, prune=prune)

    def __getitem__(self, kind):
        if kind not in self.graphs:
            self.graphs[kind] = train(self.train_set, self.config(kind)).graph
        return self.graphs[kind]


@pytest.fixture(scope="session")
def desk_models(desk_data):
    return ModelCache(desk_data[0])


class SchemeCache:
    """Scheme graphs at equal budget 3*M, trained at a fixed 10 dB on first use."""

    def __init__(self, train_set):
        self.train_set = train_set
        self.specs = {s.scheme: s for s in scheme_specs(3, DESK.n_subcarriers)}
        self.template = TrainConfig(model=ModelConfig(DESK.n_antennas, DESK.n_subcarriers, 3, conv_width=DESK_WIDTH),
                                    steps=SCHEME_STEPS, batch=32, snr_db=10.0)
        self.graphs = {}

    def select(self, *ids):
        for sid in ids:
            if sid not in self.graphs:
                self.graphs[sid] = train(self.train_set, scheme_train_config(self.specs[sid], self.template)).graph
        return {sid: self.graphs[sid] for sid in ids}


@pytest.fixture(scope="session")
def scheme_graphs(desk_data):
    return SchemeCache(desk_data[0])
