import csv
import json

import numpy as np
import pytest

from tefmm import cli
from tefmm.tables import load_tables

pytestmark = pytest.mark.filterwarnings("ignore::tefmm.dcim.FitWarning")

BASE = {
    "medium": {"interfaces": [0.0], "wavenumbers": [0.8, 1.5]},
    "blocks": [
        {"shape": "cube", "center": [0.5, 0.5, 1.0], "size": 1.0, "N": 150, "seed": 1},
        {"shape": "quartic", "center": [0.0, 0.0, -1.0], "a": 0.15, "N": 150, "seed": 2},
    ],
    "solver": {"p": 3, "capacity": 30},
    "converge": {"p_values": [2, 4], "variants": ["I", "II"]},
    "bench": {"N_values": [200, 400], "p": 2},
    "tables": {"file": "t.swt", "variants": ["I", "II"]},
}


def _write(tmp_path, data):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def test_parse_infers_layers():
    cfg = cli.parse_config(BASE)
    assert [b.layer for b in cfg.blocks] == [0, 1]
    pts, q = cfg.particles()
    assert [len(p) for p in pts] == [150, 150] and [len(c) for c in q] == [150, 150]


@pytest.mark.parametrize("mutate", [
    lambda d: d["blocks"][0].update(center=[0.5, 0.5, 0.4]),  # crosses z = 0
    lambda d: d["blocks"][1].update(shape="sphere"),
    lambda d: d["blocks"][1].update(a=0.6),
    lambda d: d["blocks"][0].pop("seed"),
    lambda d: d["blocks"][0].update(layer=1),
    lambda d: d["solver"].update(colour="red"),
    lambda d: d["solver"].update(p=-2),
    lambda d: d.pop("medium"),
])
def test_config_rejected(mutate):
    data = json.loads(json.dumps(BASE))
    mutate(data)
    with pytest.raises(cli.ConfigError):
        cli.parse_config(data)


def test_bad_config_exit_code(tmp_path):
    data = json.loads(json.dumps(BASE))
    data["blocks"][0]["center"] = [0, 0, 0.3]
    assert cli.main(["converge", "--config", str(_write(tmp_path, data)), "--out", str(tmp_path)]) == 2
    assert not (tmp_path / "converge.csv").exists()
    assert cli.main(["bench", "--out", str(tmp_path)]) == 2


def test_verify_report(tmp_path):
    assert cli.main(["verify", "--out", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "verify.json").read_text())
    assert rows and all(set(r) == {"check", "status", "value", "reference", "tolerance"} for r in rows)
    assert all(r["status"] == "pass" for r in rows)


def test_verify_failure_exit_code(tmp_path, monkeypatch):
    from tefmm import checks
    monkeypatch.setitem(checks.ALL_CHECKS, "gpof", lambda: [checks._row("forced", 1.0, 0.5)])
    assert cli.main(["verify", "--out", str(tmp_path)]) == 1


def _rows(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_converge_csv_reproducible(tmp_path):
    cfg = _write(tmp_path, BASE)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["converge", "--config", str(cfg), "--out", str(out1), "--deterministic"]) == 0
    assert cli.main(["converge", "--config", str(cfg), "--out", str(out2), "--deterministic", "--threads", "1"]) == 0
    r1, r2 = _rows(out1 / "converge.csv"), _rows(out2 / "converge.csv")
    assert r1[0] == cli.CSV_HEADER
    assert [r[:6] for r in r1] == [r[:6] for r in r2]
    comps = {r[3] for r in r1[1:]}
    assert {"free_0", "free_1", "00_up", "01_up", "10_down", "11_down", "total_0", "total_1", "total"} == comps
    total = {(r[1], r[2]): float(r[4]) for r in r1[1:] if r[3] == "total"}
    for v in ("I", "II"):
        assert total[("4", v)] < total[("2", v)] < 1e-2


def test_tables_command(tmp_path):
    cfg = _write(tmp_path, BASE)
    assert cli.main(["tables", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    run = cli.parse_config(BASE)
    h, tables = load_tables(tmp_path / "t.swt", expect_hash=run.fmm_config().table_hash())
    kinds = {type(t).__name__ for t in tables}
    assert kinds == {"NearTable", "STable", "ImageTable"}


def test_bench_command(tmp_path):
    cfg = _write(tmp_path, BASE)
    assert cli.main(["bench", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "bench.csv")
    assert rows[0] == cli.CSV_HEADER
    assert {r[0] for r in rows[1:]} == {"400", "800"}
    summary = json.loads((tmp_path / "bench_summary.json").read_text())
    assert np.isfinite(summary["I"]["gamma"])


def test_fit_exponent():
    N = np.array([1e3, 1e4, 1e5])
    assert cli.fit_exponent(N, 3e-6 * N ** 1.1) == pytest.approx(1.1)
