import numpy as np
import pytest
from hypothesis import settings

from spdnn import engine, ingest
from spdnn.model import InferenceConfig

# numba compilation can blow hypothesis' per-example deadline on first runs
settings.register_profile("spdnn", deadline=None, max_examples=50)
settings.load_profile("spdnn")

_ACCEPTANCE_RESULTS: dict[str, str] = {}
_ACCEPTANCE_NOTES: list[str] = []


def acceptance_note(line: str) -> None:
    """Record a measurement to print in the acceptance summary."""
    _ACCEPTANCE_NOTES.append(line)


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the jitted kernels once so timed tests measure compute only."""
    spec = ingest.GeneratorSpec(neurons=16, layers=1, connections_per_neuron=4,
                                seed=0, input_count=4, input_density=0.5)
    model = ingest.generate_synthetic_network(spec)
    inputs = ingest.generate_synthetic_inputs(16, 4, 0.5, seed=0)
    cfg = InferenceConfig(block_size=8, warp_size=4, buffer_capacity=8)
    engine.infer(model, inputs, cfg, mode="baseline")
    engine.infer(model, inputs, cfg, mode="optimized")
    from spdnn import oracle
    oracle.reference_infer(model, inputs)


def random_layer(rng: np.random.Generator, n: int, max_row_nnz: int,
                 allow_negative: bool = True):
    """Canonical random CSR layer with nonzero values."""
    from spdnn.model import make_layer_csr
    rows, cols = [], []
    for r in range(n):
        k = int(rng.integers(0, max_row_nnz + 1))
        if k == 0:
            continue
        c = rng.choice(n, size=min(k, n), replace=False)
        rows.extend([r] * len(c))
        cols.extend(c.tolist())
    rows = np.array(rows, dtype=np.int64)
    cols = np.array(cols, dtype=np.int64)
    vals = rng.uniform(0.01, 1.0, size=len(rows)).astype(np.float32)
    if allow_negative:
        vals *= rng.choice([-1.0, 1.0], size=len(vals)).astype(np.float32)
    return make_layer_csr(n, rows, cols, vals)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and "test_acceptance" in str(item.fspath):
        _ACCEPTANCE_RESULTS[item.name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(_ACCEPTANCE_RESULTS.items()):
            terminalreporter.write_line(f"{status}  {name}")
        for note in _ACCEPTANCE_NOTES:
            terminalreporter.write_line(note)
