import hashlib
import pickle
from pathlib import Path

import numpy as np
import pytest

import tefmm
from tefmm import fmm, oracle
from tefmm.medium import LayeredMedium

ACCEPTANCE_LINES = []


def record_acceptance(name: str, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def two_layer():
    return LayeredMedium([0.0], [0.8, 1.5])


@pytest.fixture(scope="session")
def three_layer():
    return LayeredMedium([0.0, -2.0], [0.8, 1.5, 2.0])


EXAMPLE1_CENTERS = (1.0, -1.0, -3.0)


def example1(n_layers: int, n_per_box: int, seed: int = 2024):
    """Uniform unit cubes centered at (0.5, 0.5, c) with uniform (0, 1) charges."""
    rng = np.random.default_rng(seed)
    pts = [rng.uniform(-0.5, 0.5, (n_per_box, 3)) + [0.5, 0.5, c] for c in EXAMPLE1_CENTERS[:n_layers]]
    q = [rng.uniform(0.0, 1.0, n_per_box) for _ in pts]
    return pts, q


def _source_digest() -> str:
    h = hashlib.sha256()
    for name in ("oracle.py", "medium.py", "sommerfeld.py", "special.py"):
        h.update((Path(tefmm.__file__).parent / name).read_bytes())
    return h.hexdigest()[:16]


def reference_parts(medium, pts, q):
    """Direct-sum values of every part reported by run_total."""
    ref = {}
    for l in range(medium.n_layers):
        ref[("free", l)] = oracle.free_direct_sum(pts[l], pts[l], q[l], medium.k(l), exclude_self=True)
    for comp in fmm.components(medium):
        ref[comp] = oracle.layered_direct_sum(pts[comp.layer], pts[comp.src_layer], q[comp.src_layer],
                                              medium, comp.layer, comp.src_layer, (comp.direction,))
    return ref


@pytest.fixture(scope="session")
def oracle_cache(request):
    """Direct-sum references cached on disk, keyed by geometry and by the
    source of the oracle modules."""
    root = Path(request.config.cache.mkdir("tefmm_oracle"))

    def get(tag: str, medium, pts, q):
        key = hashlib.sha256(pickle.dumps((tag, medium.interface_depths, medium.wavenumbers,
                                           [p.tobytes() for p in pts], [c.tobytes() for c in q])))
        f = root / f"{tag}_{key.hexdigest()[:16]}_{_source_digest()}.pkl"
        if f.exists():
            return pickle.loads(f.read_bytes())
        ref = reference_parts(medium, pts, q)
        f.write_bytes(pickle.dumps(ref))
        return ref

    return get
