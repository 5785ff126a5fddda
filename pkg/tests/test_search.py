import csv
import itertools
import json

import pytest

from acfatigue.errors import ConfigError
from acfatigue.search import (
    AXES,
    GridResult,
    GridSpec,
    config_hash,
    enumerate_grid,
    load_store,
    rank_records,
    run_grid,
    slice_report,
    write_slice_csv,
)

from synth import linear_samples


def test_default_grid_has_360_points():
    spec = GridSpec()
    points = enumerate_grid(spec)
    assert spec.size() == len(points) == 2 * 3 * 3 * 4 * 5
    combos = {tuple(p.axes().values()) for p in points}
    assert len(combos) == 360
    want = set(itertools.product(["mse", "msle"], ["adam", "nadam", "rmsprop"],
                                 ["relu", "linear", "sigmoid"], [1, 2, 3, 4], [10, 50, 100, 150, 200]))
    assert combos == want
    assert len({config_hash(p, spec) for p in points}) == 360


def test_selected_point_appears_once():
    sel = {"loss": "msle", "optimizer": "rmsprop", "activation": "relu", "n_hidden": 2, "neurons": 200}
    assert sum(p.axes() == sel for p in enumerate_grid(GridSpec())) == 1


def test_singleton_grid():
    spec = GridSpec(losses=["mse"], optimizers=["adam"], activations=["relu"], n_hidden=[1], neurons=[5])
    assert len(enumerate_grid(spec)) == 1


def test_enumeration_deterministic():
    a = [p.describe() for p in enumerate_grid(GridSpec())]
    assert a == [p.describe() for p in enumerate_grid(GridSpec())]


def test_invalid_specs():
    with pytest.raises(ConfigError):
        GridSpec(neurons=[])
    with pytest.raises(ConfigError):
        GridSpec(n_hidden=[1, 1])
    with pytest.raises(ValueError):
        GridSpec(activations=["softmax"])


def test_hash_depends_on_seed_and_config():
    p = enumerate_grid(GridSpec())[0]
    assert config_hash(p, GridSpec(seed=0)) != config_hash(p, GridSpec(seed=1))
    a, b = GridSpec(epochs=10), GridSpec(epochs=11)
    assert config_hash(enumerate_grid(a)[0], a) != config_hash(enumerate_grid(b)[0], b)


def test_ranking_matches_independent_sort():
    recs = [
        {"config_hash": "a", "index": 0, "mean_r2": 0.5, "n_parameters": 10},
        {"config_hash": "b", "index": 1, "mean_r2": None, "n_parameters": 5},
        {"config_hash": "c", "index": 2, "mean_r2": 0.9, "n_parameters": 50},
        {"config_hash": "d", "index": 3, "mean_r2": 0.9, "n_parameters": 20},
        {"config_hash": "e", "index": 4, "mean_r2": -2.0, "n_parameters": 1},
    ]
    ranked = [r["config_hash"] for r in rank_records(recs)]
    assert ranked == ["d", "c", "a", "e"]  # tie broken by size; unscored config left out


TOY = dict(losses=["mse"], optimizers=["adam"], activations=["linear"],
           n_hidden=[1], neurons=[1, 6], epochs=300, folds=4, seed=3, batch_size=8)


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("grid")
    spec = GridSpec(**TOY)
    return spec, d / "store.jsonl", run_grid(linear_samples(40), spec, d / "store.jsonl")


def test_toy_grid_records_and_ranking(toy_run):
    spec, store, result = toy_run
    assert len(result.records) == 2
    stored = load_store(store)
    assert {r["config_hash"] for r in stored} == {config_hash(p, spec) for p in enumerate_grid(spec)}
    independent = sorted(stored, key=lambda r: r["mean_r2"], reverse=True)
    assert [r["config_hash"] for r in result.ranking] == [r["config_hash"] for r in independent]
    top = result.ranking[0]
    assert all(top["mean_r2"] >= r["mean_r2"] for r in result.ranking)
    for rec in stored:
        assert rec["epochs"] == 300 and rec["folds"] == 4 and len(rec["fold_r2"]) == 4
        assert rec["error"] is None and rec["n_converged"] == 4


def test_resume_skips_done_points(toy_run):
    spec, store, result = toy_run
    before = store.read_text()
    calls = []
    again = run_grid(linear_samples(40), spec, store, progress=calls.append)
    assert calls == [] and store.read_text() == before
    assert [r["mean_r2"] for r in again.records] == [r["mean_r2"] for r in result.records]


def test_resume_after_truncated_write(toy_run, tmp_path):
    spec, store, result = toy_run
    lines = store.read_text().splitlines(keepends=True)
    partial = tmp_path / "store.jsonl"
    partial.write_text(lines[0] + lines[1][:40])  # crash mid-record
    calls = []
    again = run_grid(linear_samples(40), spec, partial, progress=calls.append)
    assert len(calls) == 1
    assert [r["fold_r2"] for r in again.records] == [r["fold_r2"] for r in result.records]


def test_parallel_schedule_same_scores(toy_run, tmp_path):
    spec, _, result = toy_run
    par = run_grid(linear_samples(40), spec, tmp_path / "par.jsonl", workers=2)
    assert [r["fold_r2"] for r in par.records] == [r["fold_r2"] for r in result.records]


def test_failing_config_is_recorded(tmp_path):
    spec = GridSpec(**{**TOY, "neurons": [2], "folds": 12})  # more folds than samples
    result = run_grid(linear_samples(8), spec, tmp_path / "s.jsonl")
    rec = result.records[0]
    assert rec["mean_r2"] is None and "DataError" in rec["error"]
    assert result.ranking == []


def _fake_result():
    recs = []
    for i, (loss, nh, nn) in enumerate(itertools.product(["mse", "msle"], [1, 2, 3, 4], [10, 100])):
        recs.append({"config_hash": f"h{i}", "index": i, "n_parameters": nh * nn,
                     "axes": {"loss": loss, "optimizer": "rmsprop", "activation": "relu",
                              "n_hidden": nh, "neurons": nn},
                     "mean_r2": 0.1 * nh + (0.01 if loss == "mse" else 0.0) + nn / 1e4,
                     "n_converged": 4})
    return GridResult(recs)


def test_slice_vary_n_hidden():
    res = _fake_result()
    rows = slice_report(res, "n_hidden", {"loss": "mse", "optimizer": "RMSprop",
                                          "activation": "relu", "neurons": "100"})
    assert [r[0] for r in rows] == [1, 2, 3, 4]
    direct = [r for r in res.records if r["axes"]["loss"] == "mse" and r["axes"]["neurons"] == 100]
    assert [r[1] for r in rows] == [r["mean_r2"] for r in direct]
    assert sum(r[2] for r in rows) == sum(r["n_converged"] for r in direct)


def test_slice_singleton_axis():
    rows = slice_report(_fake_result(), "optimizer",
                        {"loss": "msle", "activation": "relu", "n_hidden": 2, "neurons": 10})
    assert len(rows) == 1


def test_slice_errors():
    res = _fake_result()
    with pytest.raises(ConfigError, match="not in the grid"):
        slice_report(res, "n_hidden", {"loss": "mse", "optimizer": "adam",
                                       "activation": "relu", "neurons": 100})
    with pytest.raises(ConfigError, match="must specify"):
        slice_report(res, "n_hidden", {"loss": "mse"})
    with pytest.raises(ConfigError, match="unknown axis"):
        slice_report(res, "depth", {})


def test_slice_csv(tmp_path):
    write_slice_csv(tmp_path / "s.csv", [(1, 0.5, 4), (2, None, 0)])
    with open(tmp_path / "s.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows == [["axis_value", "mean_r2", "n_converged"], ["1", "0.5", "4"], ["2", "", "0"]]


def test_ranking_csv(toy_run, tmp_path):
    _, _, result = toy_run
    result.write_ranking(tmp_path / "r.csv")
    with open(tmp_path / "r.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["config_hash"] for r in rows] == [r["config_hash"] for r in result.ranking]
    assert set(AXES) <= set(rows[0])


def test_store_lines_are_json(toy_run):
    _, store, _ = toy_run
    for line in store.read_text().splitlines():
        assert json.loads(line)["seed"] >= 0
