import json

import pytest

from stochburgers import cli
from stochburgers.ensemble import block_ranges, realization_seed
from stochburgers.experiments import (
    OUTPUT_ENV,
    ConfigError,
    load_config,
    parse_config,
    run,
    sweep,
)

BASE = {
    "experiment": "moment_convergence",
    "T": 0.5,
    "K": 500,
    "M": 32,
    "epsilon": 0.2,
    "n_realizations": 12,
    "master_seed": 5,
    "block_size": 5,
    "spectrum": {"a": [0.5]},
}


def cfg_of(tmp_path, **changes):
    table = json.loads(json.dumps(BASE)) | changes
    table.setdefault("output", str(tmp_path / "out"))
    return parse_config(table)


def write_toml(path, table):
    lines, sections = [], []
    for k, v in table.items():
        (sections if isinstance(v, dict) else lines).append((k, v))
    text = "".join(f"{k} = {json.dumps(v)}\n" for k, v in lines)
    for name, sec in sections:
        text += f"[{name}]\n" + "".join(f"{k} = {json.dumps(v)}\n" for k, v in sec.items())
    path.write_text(text)
    return path


def files(out):
    return {name: (out / name).read_bytes() for name in ("results.jsonl", "summary.csv")}


@pytest.mark.parametrize(
    "changes, match",
    [
        ({"n_realizations": 0}, "n_realizations"),
        ({"M": 2}, "must exceed"),
        ({"epsilon": []}, "nonempty"),
        ({"epsilon": -0.1}, "positive"),
        ({"experiment": "magic"}, "experiment"),
        ({"K": 10.5}, "integer"),
        ({"colour": "blue"}, "unknown config keys"),
        ({"moment_convergence": {"ordres": [2]}}, "unknown options"),
        ({"moment_convergence": {"orders": [20]}}, "orders"),
        ({"spectrum": {"a": [0.0]}}, "spectrum"),
        ({"cfl_safety": 2.0}, "cfl_safety"),
    ],
)
def test_invalid_configs_rejected(tmp_path, changes, match):
    with pytest.raises(ConfigError, match=match):
        cfg_of(tmp_path, **changes)


def test_cli_config_error_exit_code(tmp_path, capsys):
    path = write_toml(tmp_path / "bad.toml", BASE | {"n_realizations": 0})
    assert cli.main(["run", str(path)]) == 2
    assert "n_realizations" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_cli_unparseable_config(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("T = = 1\n")
    assert cli.main(["run", str(bad)]) == 2


def test_realization_seeds_are_pure():
    assert realization_seed(3, 7) == realization_seed(3, 7)
    seeds = {realization_seed(3, r) for r in range(1000)}
    assert len(seeds) == 1000
    assert realization_seed(4, 7) != realization_seed(3, 7)
    assert [list(r) for r in block_ranges(7, 3)] == [[0, 1, 2], [3, 4, 5], [6]]


def test_hash_tracks_semantic_fields_only(tmp_path):
    h = cfg_of(tmp_path).config_hash()
    assert cfg_of(tmp_path, workers=4, output="elsewhere").config_hash() == h
    assert cfg_of(tmp_path, T=1 / 2, epsilon=[0.2]).config_hash() == h
    for change in ({"epsilon": 0.1}, {"master_seed": 6}, {"K": 600}, {"moment_convergence": {"orders": [2]}}):
        assert cfg_of(tmp_path, **change).config_hash() != h


def test_family_and_explicit_spectra_hash_alike(tmp_path):
    fam = cfg_of(tmp_path, spectrum={"c": 0.5, "q": 2, "n_max": 2})
    lst = cfg_of(tmp_path, spectrum={"a": [0.5, 0.125]})
    assert fam.config_hash() == lst.config_hash()


def test_identical_runs_are_byte_identical(tmp_path):
    a = cfg_of(tmp_path, output=str(tmp_path / "a"))
    b = cfg_of(tmp_path, output=str(tmp_path / "b"))
    ma, mb = run(a), run(b)
    assert files(tmp_path / "a") == files(tmp_path / "b")
    da = json.loads((tmp_path / "a" / "manifest.json").read_text())
    db = json.loads((tmp_path / "b" / "manifest.json").read_text())
    da.pop("wall_time_s"), db.pop("wall_time_s")
    assert da == db
    assert ma.exit_code == 0 and ma.config_hash == mb.config_hash


def test_worker_count_does_not_change_results(tmp_path):
    run(cfg_of(tmp_path, output=str(tmp_path / "w1"), workers=1))
    run(cfg_of(tmp_path, output=str(tmp_path / "w3"), workers=3))
    assert files(tmp_path / "w1") == files(tmp_path / "w3")


def test_output_directory_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    m = run(cfg_of(tmp_path))
    assert (tmp_path / "env" / "manifest.json").exists()
    assert m.output_dir == str(tmp_path / "env")


def test_moment_run_records(tmp_path):
    m = run(cfg_of(tmp_path))
    recs = [json.loads(l) for l in (tmp_path / "out" / "results.jsonl").read_text().splitlines()]
    real = [r for r in recs if r["kind"] == "realization"]
    assert [r["index"] for r in real] == list(range(12))
    assert all(r["seed"] == realization_seed(5, r["index"]) for r in real)
    moments = [r for r in recs if r["kind"] == "moment"]
    assert [r["order"] for r in moments] == [1, 2, 3, 4]
    assert m.checks == {"conservation[eps=0.2]": True}
    assert "wall" not in (tmp_path / "out" / "results.jsonl").read_text()


def test_sweep_of_one_epsilon_equals_run(tmp_path):
    run(cfg_of(tmp_path, output=str(tmp_path / "r")))
    sweep(cfg_of(tmp_path, output=str(tmp_path / "s"), epsilon=[0.2]))
    assert files(tmp_path / "r") == files(tmp_path / "s")


def test_sweep_surfaces_stability_failures(tmp_path):
    cfg = cfg_of(tmp_path, K=20, M=64, epsilon=[0.4, 0.1], n_realizations=4)
    m = sweep(cfg)
    # dt = 0.025 exceeds dx^2/eps only for the larger viscosity
    assert m.exit_code == 3
    assert m.n_excluded == 4
    per = {p["epsilon"]: p for p in m.summary["per_epsilon"]}
    assert per[0.4]["n_excluded"] == 4 and per[0.4]["errors"][0].startswith("stability")
    assert per[0.1]["n_excluded"] == 0 and per[0.1]["errors"] == []


def test_run_rejects_epsilon_list_for_moments(tmp_path):
    with pytest.raises(ConfigError):
        run(cfg_of(tmp_path, epsilon=[0.2, 0.1]))


def test_sweep_reports_table(tmp_path):
    m = sweep(cfg_of(tmp_path, epsilon=[0.1, 0.3], n_realizations=6))
    assert [row["epsilon"] for row in m.summary["sweep_table"]] == [0.3, 0.1]
    assert "monotone_approach[order=2]" in m.checks


def test_solver_crosscheck_one_seed(tmp_path):
    cfg = cfg_of(tmp_path, experiment="solver_crosscheck", n_realizations=1, T=0.5, K=1000, M=128, epsilon=0.1)
    m = run(cfg)
    rec = json.loads((tmp_path / "out" / "results.jsonl").read_text().splitlines()[0])
    assert rec["kind"] == "crosscheck" and 0 < rec["rel_l2"] < 0.05
    assert rec["rel_l2_refined"] < rec["rel_l2"]
    assert m.exit_code == 0


def test_covariance_check_passes(tmp_path):
    cfg = cfg_of(tmp_path, experiment="covariance_check", n_realizations=3000, T=1.0, K=4, spectrum={"a": [1.0, 0.3]})
    assert run(cfg).exit_code == 0


def test_fk_crosscheck_small(tmp_path):
    cfg = cfg_of(
        tmp_path,
        experiment="fk_crosscheck",
        n_realizations=1,
        T=0.5,
        K=200,
        M=64,
        epsilon=0.3,
        fk_crosscheck={"n_points": 4, "n_walkers": 4000, "min_fraction": 0.75},
    )
    m = run(cfg)
    recs = [json.loads(l) for l in (tmp_path / "out" / "results.jsonl").read_text().splitlines()]
    assert len(recs) == 4 and {"t", "x", "estimate", "std_error", "n_walkers"} <= set(recs[0])
    assert m.exit_code == 0


def test_variational_compare_small(tmp_path):
    cfg = cfg_of(
        tmp_path,
        experiment="variational_compare",
        n_realizations=1,
        T=1.0,
        K=400,
        M=256,
        epsilon=[0.05, 0.02],
        spectrum={"a": [0.1]},
        variational_compare={"n_x": 4},
    )
    m = run(cfg)
    recs = [json.loads(l) for l in (tmp_path / "out" / "results.jsonl").read_text().splitlines()]
    pts = [r for r in recs if r["kind"] == "variational"]
    assert len(pts) == 4
    assert {"x", "t", "action", "u", "el_residual", "n_restarts_used"} <= set(pts[0])
    assert m.exit_code == 0


def test_audit_command_small(tmp_path):
    table = BASE | {
        "T": 1.0,
        "K": 500,
        "output": str(tmp_path / "audit"),
        "bound_audit": {
            "n_sup": 50,
            "sup_dt": 1e-2,
            "n_lemma6": 3,
            "n_theorem11": 4,
            "n_theorem23": 2,
            "theorem23_K": 200,
            "theorem23_n_x": 4,
        },
    }
    table["experiment"] = "bound_audit"
    path = write_toml(tmp_path / "audit.toml", table)
    assert cli.main(["audit", str(path)]) == 0
    manifest = json.loads((tmp_path / "audit" / "manifest.json").read_text())
    assert manifest["checks"]["moment_identity"] and manifest["summary"]["n_violations"] == 0
    csv_text = (tmp_path / "audit" / "summary.csv").read_text()
    for name in ("lemma3", "lemma4", "lemma6", "theorem11", "theorem23"):
        assert name in csv_text


def test_dump_and_replay(tmp_path, capsys):
    cfg_path = write_toml(tmp_path / "c.toml", BASE | {"output": str(tmp_path / "replay")})
    dump = tmp_path / "path.bin"
    assert cli.main(["dump", str(cfg_path), "--index", "2", "--out", str(dump)]) == 0
    assert cli.main(["replay", str(dump), "--config", str(cfg_path), "--save-every", "250", "--values"]) == 0
    recs = [json.loads(l) for l in (tmp_path / "replay" / "results.jsonl").read_text().splitlines()]
    snaps = [r for r in recs if r["kind"] == "snapshot"]
    assert {r["solver"] for r in snaps} == {"viscous", "colehopf"}
    assert [r["t"] for r in snaps if r["solver"] == "viscous"] == [0.0, 0.25, 0.5]
    assert len(snaps[0]["values"]) == 32 and set(snaps[0]["stats"]) == {"mean", "min", "max", "l2"}
    cross = recs[-1]
    assert cross["seed"] == realization_seed(5, 2) and cross["rel_l2"] < 0.05


def test_replay_rejects_corrupt_dump(tmp_path):
    cfg_path = write_toml(tmp_path / "c.toml", BASE)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 10)
    assert cli.main(["replay", str(bad), "--config", str(cfg_path)]) == 2


def test_cli_overrides(tmp_path):
    path = write_toml(tmp_path / "c.toml", BASE)
    cfg = load_config(path, workers=3, seed=99)
    assert cfg.workers == 3 and cfg.master_seed == 99
