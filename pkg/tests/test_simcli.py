import csv
import json

import numpy as np
import pytest
from scipy.special import exp1

from lfmac.bf_codebook import BeamformingCodebook
from lfmac.config import ConfigError, config_hash, load_config, parse_config
from lfmac.cov_codebook import CovarianceCodebook
from lfmac.simcli import (CSV_COLUMNS, OUTPUT_DIR_ENV, high_snr_slope, main, pack, recipe_path,
                          run, run_config, snr_gap_db, validate)

RECIPES = [f"fig{i}" for i in range(4, 11)]


def _cfg(**over):
    raw = {
        "name": "small",
        "dims": {"K": 2, "Mt": 2, "Mr": 2},
        "channel": {"kind": "iid"},
        "snr_grid_db": [0.0, 10.0],
        "bits_list": [1, 2],
        "schemes": ["covariance", "full_csi", "no_feedback"],
        "budget": {"kind": "sum"},
        "training_size": 100,
        "eval_draws": 60,
        "seed": 3,
        "lloyd": {"restarts": 1, "max_rounds": 5},
    }
    raw.update(over)
    return raw


def _write(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


@pytest.mark.parametrize("name", RECIPES)
def test_recipes_validate(name):
    assert validate(recipe_path(name)).startswith("ok")
    assert load_config(recipe_path(name)).raw["acceptance"] is True


def test_missing_dims_rejected():
    raw = _cfg()
    del raw["dims"]
    with pytest.raises(ConfigError, match="dims"):
        parse_config(raw)


def test_descending_grid_rejected():
    with pytest.raises(ConfigError, match=r"snr_grid_db\[1\]"):
        parse_config(_cfg(snr_grid_db=[10.0, 0.0]))


@pytest.mark.parametrize("over, field", [
    ({"eval_draws": 500, "acceptance": True}, "eval_draws"),
    ({"training_size": 50}, "training_size"),
    ({"schemes": ["eigenbeam"], "budget": {"kind": "individual", "fractions": [0.5, 0.5]}}, "budget"),
    ({"schemes": ["region2u"]}, "budget.kind"),
    ({"dims": {"K": 2, "Mt": 2}}, "dims"),
    ({"channel": {"kind": "kronecker"}}, "channel"),
    ({"channel": {"kind": "kronecker", "tx_eigenvalues": [1.0]}}, "channel.tx_eigenvalues"),
    ({"schemes": ["teleport"]}, "schemes[0]"),
    ({"bits_list": [0], "schemes": ["grassmann"]}, "bits_list"),
])
def test_invalid_configs(over, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(_cfg(**over))
    assert str(exc.value).startswith(field)


def test_no_feedback_closed_form(tmp_path):
    # K = Mt = Mr = 1: E log2(1 + P g) with g ~ Exp(1) equals e^{1/P} E1(1/P) / ln 2
    raw = _cfg(dims={"K": 1, "Mt": 1, "Mr": 1}, schemes=["no_feedback"], bits_list=[],
               eval_draws=20000, snr_grid_db=[0.0, 10.0])
    del raw["training_size"]
    table = run_config(parse_config(raw))
    assert len(table.rows) == 2
    for row in table.rows:
        P = 10 ** (row.snr_db / 10)
        exact = np.exp(1 / P) * exp1(1 / P) / np.log(2)
        assert abs(row.mean_bits - exact) < 4 * row.stderr_bits
        assert row.B is None


def test_row_count_and_csv_format(tmp_path):
    raw = _cfg(bits_list=[1, 2, 3, 4], training_size=320, eval_draws=30)
    table = run(_write(tmp_path, raw), out=str(tmp_path / "out"))
    assert len(table.rows) == 4 * 2 + 2 * 2
    text = (tmp_path / "out" / "small.csv").read_bytes()
    assert b"\r" not in text
    rows = list(csv.reader(text.decode("utf-8").splitlines()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[1][:2] == ["covariance", "1"]
    assert rows[-1][:2] == ["no_feedback", ""]
    meta = json.loads((tmp_path / "out" / "small.json").read_text())["meta"]
    assert meta["config_hash"] == config_hash(raw)
    assert meta["seed"] == 3


def test_same_config_same_bytes(tmp_path):
    p = _write(tmp_path, _cfg(schemes=["covariance", "eigenbeam", "grassmann", "random_bf",
                                       "statistical_bf", "tdma"],
                              grassmann={"training_size": 300, "rounds": 3},
                              codebook_realizations=2))
    run(p, out=str(tmp_path / "a"))
    run(p, out=str(tmp_path / "b"), threads=2)
    for f in ("small.csv", "small.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_override_changes_results(tmp_path):
    p = _write(tmp_path, _cfg(schemes=["no_feedback"]))
    a = run(p, out=str(tmp_path / "a"))
    b = run(p, out=str(tmp_path / "b"), seed=4)
    assert a.rows[0].mean_bits != b.rows[0].mean_bits
    assert b.rows[0].seed == 4


def test_nonconvergent_design_flagged(tmp_path):
    raw = _cfg(schemes=["covariance"], bits_list=[2], snr_grid_db=[10.0],
               lloyd={"restarts": 1, "max_rounds": 1, "tol_bits": 1e-12})
    table = run_config(parse_config(raw))
    assert table.rows[0].flags
    assert table.meta["flagged_cells"] == 1


def test_region_output(tmp_path):
    raw = _cfg(schemes=["region2u"], budget={"kind": "individual", "fractions": [0.5, 0.5]},
               snr_grid_db=[5.0], region={"n_directions": 5})
    table = run_config(parse_config(raw))
    assert table.rows == []
    assert [g["B"] for g in table.regions] == [1, 2]
    assert table.regions[0]["codewords"] == table.regions[1]["codewords"][:2]


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    p = _write(tmp_path, _cfg(schemes=["no_feedback"]))
    assert main(["run", str(p)]) == 0
    assert (tmp_path / "env" / "small.csv").exists()


def test_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path, _cfg(snr_grid_db=[1.0, 1.0]), "bad.json")
    assert main(["validate", str(bad)]) == 1
    assert "snr_grid_db[1]" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "missing.json")]) == 1
    good = _write(tmp_path, _cfg(schemes=["no_feedback"]))
    assert main(["validate", str(good)]) == 0
    blocker = tmp_path / "file"
    blocker.write_text("x")
    # output directory is an existing file: runtime failure
    assert main(["run", str(good), "--out", str(blocker)]) == 2
    assert main(["run", str(good), "--threads", "0"]) == 1


def test_pack(tmp_path):
    p = _write(tmp_path, _cfg(snr_grid_db=[0.0], grassmann={"training_size": 300, "rounds": 3}))
    cov = pack(p, "covariance", out=str(tmp_path / "cb"))
    assert len(cov) == 2
    assert CovarianceCodebook.load(cov[0]).B == 1
    eig = pack(p, "eigenbeam", out=str(tmp_path / "cb"))
    assert BeamformingCodebook.load(eig[1]).B == 2
    gr = pack(p, "grassmann", out=str(tmp_path / "cb"))
    cb = BeamformingCodebook.load(gr[0])
    assert "delta_fs" in cb.design_meta
    assert main(["pack", "--scheme", "grassmann", str(p), "--out", str(tmp_path / "cli")]) == 0


def test_gap_and_slope_helpers():
    snr = np.arange(0.0, 21.0, 2.5)
    ref = np.log2(1 + 10 ** (snr / 10))
    better = np.log2(1 + 10 ** ((snr + 2.0) / 10))
    assert snr_gap_db(snr, ref, better) == pytest.approx(2.0, abs=0.05)
    assert snr_gap_db(snr, ref, ref) == 0.0
    lin = 0.5 * snr
    assert high_snr_slope(snr, lin, 5.0, 20.0) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        snr_gap_db(snr, ref, ref, level=100.0)
