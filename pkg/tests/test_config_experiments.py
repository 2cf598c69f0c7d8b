import csv
import io
import json
import math
import pathlib
import xml.etree.ElementTree as ET

import pytest

from recurlab.config import load_config, parse_config
from recurlab.errors import ConfigError, RecurlabError
from recurlab.experiments import (CSV_COLUMNS, ResultTable, emit_outputs, parse_csv, run_experiment,
                                  table_to_csv, table_to_json, table_to_svg)

ROOT = pathlib.Path(__file__).resolve().parents[1]
INVALID = sorted((ROOT / "configs" / "invalid").glob("*.cfg"))

SMALL = """
[system]
type = "linear"
A = [[{a}]]
B = [[1.0]]
L = [[{l}]]

[system.noise]
kind = "gaussian"
mean = [0.0]
covariance = [[1.0]]

[system.cost]
type = "quadratic"
Q = [[1.0]]
R = [[1.0]]

[assumptions]
mode = "auto"

[policy]
oracle = "lqr"
selector = "greedy"
eta = {eta}

[certification]
estimand = "{estimand}"
Delta0 = 2.0
delta = 0.5
p = 0.1
T = {T}
gammas = {gammas}
epsilons = {epsilons}
N = {N}
seed = 3
x0 = "ball"
"""


def small(a=1.0, l=0.2, eta="[{ eta0 = 0.0 }]", estimand="recurrence", T=20, gammas="[0.9]",
          epsilons="[0.0]", N=200):
    return parse_config(SMALL.format(a=a, l=l, eta=eta, estimand=estimand, T=T, gammas=gammas,
                                     epsilons=epsilons, N=N))


def test_shipped_scalar_config():
    cfg = load_config(ROOT / "configs" / "scalar.cfg")
    assert cfg.system.n == 1 and cfg.system.is_linear
    assert tuple(cfg.certification.gammas) == (0.8, 0.95, 0.995)
    assert cfg.certification.N == 10_000 and cfg.certification.T_cap == 500
    assert cfg.policy.selector == "greedy"
    assert len(cfg.config_hash) == 16


def test_shipped_configs_parse():
    for name in ("scalar.cfg", "sweep.cfg", "sine.cfg"):
        load_config(ROOT / "configs" / name)


@pytest.mark.parametrize("path", INVALID, ids=lambda p: p.stem)
def test_invalid_configs_rejected(path):
    expected = [ln.split(":", 1)[1].strip() for ln in path.read_text().splitlines()
                if ln.startswith("# expected error:")]
    assert expected
    with pytest.raises(ConfigError) as info:
        load_config(path)
    joined = "\n".join(info.value.errors)
    for msg in expected:
        assert msg in joined
    assert len(info.value.errors) >= len(expected)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/x.cfg")


def test_hash_tracks_content_and_overrides():
    a, b = small(N=200), small(N=201)
    assert a.config_hash != b.config_hash
    assert small(N=200).config_hash == a.config_hash
    assert a.with_overrides(seed=9).certification.seed == 9


def test_row_count_and_order():
    cfg = small(gammas="[0.8, 0.9]", epsilons="[0.0, 0.05]", eta="[{ eta0 = 0.0 }, { eta0 = 0.1 }]", N=50, T=5)
    table = run_experiment(cfg)
    assert len(table) == 2 * 2 * 2
    keys = [(r.gamma, r.epsilon, r.eta) for r in table.rows]
    assert [k[0] for k in keys] == [0.8] * 4 + [0.9] * 4
    assert len(set(keys)) == 8
    assert all(r.error == "" and r.N == 50 for r in table.rows)


def test_deterministic_contraction_row():
    # x+ = 0.5 x + u with no noise: the origin is reached geometrically, estimate must be 1
    cfg = small(a=0.5, l=0.0, T=30, N=100)
    (row,) = run_experiment(cfg).rows
    assert row.estimate == 1.0 and row.S == 100 and row.error == ""


def test_csv_round_trip(tmp_path):
    cfg = small(gammas="[0.8, 0.9]", N=100, T=10)
    table = run_experiment(cfg)
    text = table_to_csv(table)
    header = next(csv.reader(io.StringIO(text)))
    assert tuple(header) == CSV_COLUMNS
    back = parse_csv(text)
    for r, b in zip(table.rows, back):
        for c in CSV_COLUMNS:
            assert getattr(r, c) == getattr(b, c), c
    assert table_to_csv(ResultTable(back, table.config_hash)) == text


def test_json_and_svg_outputs(tmp_path):
    table = run_experiment(small(gammas="[0.8, 0.95]", N=100, T=10))
    paths = emit_outputs(table, tmp_path, ("csv", "json", "svg"), "out")
    assert [pathlib.Path(p).name for p in paths] == ["out.csv", "out.json", "out.svg"]
    recs = json.loads(table_to_json(table))
    assert len(recs) == 2 and "wall_time" in recs[0]
    root = ET.fromstring(table_to_svg(table))
    assert root.tag.endswith("svg")
    assert len([e for e in root.iter() if e.tag.endswith("circle")]) == 2


def test_emit_errors(tmp_path):
    with pytest.raises(Exception):
        emit_outputs(ResultTable([]), tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    table = run_experiment(small(N=20, T=2))
    with pytest.raises(RecurlabError, match="cannot write"):
        emit_outputs(table, blocker / "sub")


def test_errors_recorded_in_row():
    # unstable, uncontrollable system: Riccati has no solution, the row records it and the sweep continues
    text = SMALL.format(a=1.0, l=0.2, eta="[{ eta0 = 0.0 }]", estimand="recurrence", T=5,
                        gammas="[0.8, 0.9]", epsilons="[0.0]", N=20).replace("B = [[1.0]]", "B = [[0.0]]")
    text = text.replace("A = [[1.0]]", "A = [[2.0]]")
    try:
        cfg = parse_config(text)
    except ConfigError:
        pytest.skip("rejected at parse time")
    table = run_experiment(cfg)
    assert len(table) == 2
    assert all(r.error for r in table.rows)
    assert all(r.estimate is None for r in table.rows)
    text = table_to_csv(table)
    assert parse_csv(text)[0].error == table.rows[0].error


def test_non_finite_values_in_json():
    table = run_experiment(small(N=20, T=2))
    table.rows[0].Delta = math.inf
    assert json.loads(table_to_json(table))[0]["Delta"] == "inf"


def test_boundedness_rows():
    table = run_experiment(small(estimand="boundedness", N=200, T=10))
    (row,) = table.rows
    assert row.estimand == "boundedness" and row.Delta > 2.0 and row.ci_low > 0.9
