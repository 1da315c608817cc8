import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from dlen import checkpoint
from dlen.cli import main
from dlen.config import ConfigError, load, parse

SMALL = {
    "seed": 3,
    "model": {"kind": "DLEN", "n_shared_experts": 2, "expert_widths": [16, 8], "tower_widths": [4],
              "hidden_state_widths": [8], "embedding_dim": 3},
    "data": {"generator": {"n_samples": 3000, "categorical": [["user", 20], ["item", 30]],
                           "n_numeric": 2}},
    "training": {"epochs": 1, "batch_size": 256},
    "fusion": {"k": 5, "set_size": 20},
    "bench": {"seeds": [0, 1], "models": ["MMOE", "DLEN"]},
    "gradcheck": {"n_seeds": 2},
}


def _config(tmp_path, **overrides) -> Path:
    raw = json.loads(json.dumps(SMALL))
    for key, value in overrides.items():
        section, _, sub = key.partition(".")
        if sub:
            raw.setdefault(section, {})[sub] = value
        else:
            raw[section] = value
    path = tmp_path / f"cfg{len(list(tmp_path.glob('cfg*')))}.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def _bytes(out: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if not p.name.startswith("manifest")}


@pytest.mark.trivial
def test_default_config_parses():
    cfg = load(Path(__file__).parents[1] / "configs" / "default.yaml")
    assert cfg.tasks == ("click", "like", "follow")
    assert cfg.generator.n_samples == 100_000
    assert len(cfg.sha256) == 64


@pytest.mark.trivial
@pytest.mark.parametrize("raw,key", [
    ({"model": {}}, "seed"),
    ({"seed": 0, "modle": {}}, "modle"),
    ({"seed": 0, "model": {"kind": "PLE"}, "data": {"generator": {}}}, "model.kind"),
    ({"seed": 0, "data": {"generator": {}}, "training": {"epochs": 1.5}}, "training.epochs"),
    ({"seed": 0, "data": {"generator": {}}, "model": {"alpha": {"multiplier": 0.9}}},
     "model.alpha.multiplier"),
    ({"seed": 0, "data": {"generator": {}}, "fusion": {"task_weights": {"nope": 1}}},
     "fusion.task_weights"),
])
def test_config_errors_name_the_key(raw, key):
    with pytest.raises(ConfigError) as exc:
        parse(raw)
    assert exc.value.key == key


@pytest.mark.trivial
def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("seed: 0\nmodel: {kind: XYZ}\ndata: {generator: {}}\n")
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "model.kind" in capsys.readouterr().err


@pytest.mark.trivial
def test_missing_config_file_exit_code(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == 3


@pytest.mark.trivial
def test_pipeline_is_reproducible(tmp_path):
    cfg = _config(tmp_path)
    runs = []
    for r in ("a", "b"):
        base = tmp_path / r
        assert main(["gen-data", "--config", str(cfg), "--out", str(base / "data")]) == 0
        data = str(base / "data" / "train.tsv")
        assert main(["train", "--config", str(cfg), "--out", str(base / "train"), "--data", data]) == 0
        ckpt = str(base / "train" / "checkpoint.dlen1")
        assert main(["eval", "--config", str(cfg), "--out", str(base / "eval"), "--data", data,
                     "--checkpoint", ckpt]) == 0
        runs.append({d: _bytes(base / d) for d in ("data", "train", "eval")})
    assert runs[0] == runs[1]
    manifest = json.loads((tmp_path / "a" / "train" / "manifest.train.json").read_text())
    assert manifest["seed"] == 3
    assert set(manifest["artifacts"]) == {"checkpoint.dlen1", "metrics.tsv"}
    report = (tmp_path / "a" / "eval" / "eval_report.tsv").read_text()
    assert "latent\tauc_true_latent" in report


@pytest.mark.trivial
def test_seed_flag_overrides_config(tmp_path):
    cfg = _config(tmp_path)
    main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "s3")])
    main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "s4"), "--seed", "4"])
    a = (tmp_path / "s3" / "train.tsv").read_bytes()
    b = (tmp_path / "s4" / "train.tsv").read_bytes()
    assert a != b
    assert json.loads((tmp_path / "s4" / "manifest.gen-data.json").read_text())["seed"] == 4


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    out = {}
    for kind in ("DLEN", "MMOE"):
        cfg = _config(tmp, **{"model.kind": kind})
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp / "data")]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(tmp / kind),
                     "--data", str(tmp / "data" / "train.tsv")]) == 0
        out[kind] = (cfg, tmp / kind / "checkpoint.dlen1")
    out["data"] = tmp / "data" / "train.tsv"
    return out


@pytest.mark.derived
def test_eval_with_baseline_writes_gains(trained, tmp_path):
    data = str(trained["data"])
    cfg_m, ck_m = trained["MMOE"]
    cfg_d, ck_d = trained["DLEN"]
    assert main(["eval", "--config", str(cfg_m), "--out", str(tmp_path / "m"), "--data", data,
                 "--checkpoint", str(ck_m)]) == 0
    assert main(["eval", "--config", str(cfg_d), "--out", str(tmp_path / "d"), "--data", data,
                 "--checkpoint", str(ck_d), "--baseline", str(tmp_path / "m" / "eval_report.tsv")]) == 0
    gains = (tmp_path / "d" / "mtl_gain.tsv").read_text().splitlines()
    assert gains[0] == "task\tmetric\tvalue"
    assert any(line.startswith("click\tmtl_gain\t") for line in gains)


@pytest.mark.trivial
def test_checkpoint_mismatch_exit_code(trained, tmp_path):
    cfg_m, _ = trained["MMOE"]
    _, ck_d = trained["DLEN"]
    code = main(["eval", "--config", str(cfg_m), "--out", str(tmp_path), "--data", str(trained["data"]),
                 "--checkpoint", str(ck_d)])
    assert code == 5
    bad = tmp_path / "bad.dlen1"
    bad.write_bytes(b"garbage")
    assert main(["eval", "--config", str(cfg_m), "--out", str(tmp_path), "--data", str(trained["data"]),
                 "--checkpoint", str(bad)]) == 5


@pytest.mark.trivial
def test_rank_sim_latent_mode_needs_dlen(trained, tmp_path):
    cfg_m, ck_m = trained["MMOE"]
    code = main(["rank-sim", "--config", str(cfg_m), "--out", str(tmp_path), "--data", str(trained["data"]),
                 "--checkpoint", str(ck_m)])
    assert code == 7


@pytest.mark.trivial
def test_rank_sim_reports_both_modes(trained, tmp_path):
    cfg_d, ck_d = trained["DLEN"]
    assert main(["rank-sim", "--config", str(cfg_d), "--out", str(tmp_path), "--data", str(trained["data"]),
                 "--checkpoint", str(ck_d)]) == 0
    rows = (tmp_path / "rank_sim.tsv").read_text().splitlines()
    assert rows[0] == "mode\tk\tdetest_fraction\texpected_interactions"
    assert [r.split("\t")[0] for r in rows[1:]] == ["latent", "composed"]
    assert (tmp_path / "rank_sim_oracle.tsv").exists()


@pytest.mark.trivial
def test_missing_data_file_exit_code(tmp_path):
    cfg = _config(tmp_path)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path), "--data",
                 str(tmp_path / "nope.tsv")]) == 3


@pytest.mark.derived
def test_gradcheck_command(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["gradcheck", "--config", str(cfg)]) == 0
    assert "PASS DLEN" in capsys.readouterr().out


@pytest.mark.trivial
def test_bench_command(tmp_path):
    cfg = _config(tmp_path)
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    table = (tmp_path / "b" / "bench.tsv").read_text().splitlines()
    assert table[0].startswith("model\tauc:click")
    assert [r.split("\t")[0] for r in table[1:]] == ["MMOE", "DLEN"]
    runs = (tmp_path / "b" / "bench_runs.tsv").read_text().splitlines()
    assert len(runs) == 1 + 2 * 2


@pytest.mark.trivial
def test_checkpoint_written_by_train_round_trips(trained):
    _, ck = trained["DLEN"]
    raw = ck.read_bytes()
    assert checkpoint.dumps(checkpoint.loads(raw)) == raw
    state = checkpoint.load(ck)
    assert all(v.dtype == np.float32 for v in state.values())
