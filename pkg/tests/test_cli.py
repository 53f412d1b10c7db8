import numpy as np
import pytest

from packetnet.cli import (load_config, main, parse_config_text, run, run_scenario_comparison,
                           write_scenario)
from packetnet.errors import ConfigurationError


def dataset(tmp_path, n=120, n_features=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n_features))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    path = tmp_path / "toy.csv"
    path.write_text("".join(",".join(f"{v:.6f}" for v in row) + f",{lab}\n"
                            for row, lab in zip(X, y)))
    return path


def config_file(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(f"""# toy run
dataset = {dataset(tmp_path)}
hidden_size = 4
lr = 0.01
aggregate_by = mean
seeds = 0, 1
output_dir = {tmp_path / 'out'}
{extra}""")
    return path


def test_parse_aliases_and_overrides():
    cfg = parse_config_text("hidden = 16\naggregator = min\nlearning_rate = 0.002\n",
                            ["seeds=3 4", "max_cells=5", "min_seen = 2", "header = yes"])
    assert (cfg.hidden_size, cfg.aggregate_by, cfg.lr) == (16, "min", 0.002)
    assert cfg.seeds == [3, 4] and cfg.max_cells == 5 and cfg.min_seen == 2 and cfg.header


@pytest.mark.parametrize("text, field", [
    ("normalizer = robust", "normalizer"),
    ("bogus = 1", "bogus"),
    ("hidden_size = many", "hidden_size"),
    ("aggregate_by = median", "aggregator"),
    ("seeds = ", "seeds"),
])
def test_validation_names_field(tmp_path, text, field):
    path = dataset(tmp_path)
    with pytest.raises(ConfigurationError, match=field):
        parse_config_text(f"dataset = {path}\n{text}\n").validate()


def test_missing_dataset_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="dataset"):
        parse_config_text(f"dataset = {tmp_path / 'nope.csv'}").validate()


def test_run_writes_outputs_and_is_deterministic(tmp_path):
    cfg = load_config(config_file(tmp_path))
    reports = run(cfg)
    out = tmp_path / "out"
    assert len(reports) == 2 and reports[0].n == 120
    first = (out / "seed0.scores.csv").read_bytes()
    assert (out / "seed1.report.txt").exists() and (out / "aggregate.txt").exists()
    run(cfg)
    assert (out / "seed0.scores.csv").read_bytes() == first


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    path = config_file(tmp_path, "seeds = 0\n")
    run(load_config(path))
    full = (tmp_path / "out" / "seed0.scores.csv").read_bytes()
    ck = tmp_path / "ck.npz"
    run(load_config(path, ["stop_at=50", f"checkpoint_out={ck}", f"output_dir={tmp_path / 'a'}"]))
    run(load_config(path, [f"checkpoint_in={ck}", f"output_dir={tmp_path / 'b'}"]))
    assert (tmp_path / "b" / "seed0.scores.csv").read_bytes() == full


def test_single_baseline_run(tmp_path):
    cfg = load_config(config_file(tmp_path, "model = single_baseline\nimputer = rolling_mean\n"))
    assert run(cfg)[0].n == 120


def test_scenario_single_interval_identical(tmp_path):
    cfg = load_config(config_file(tmp_path, "intervals = 1\nseeds = 0\n"))
    res = run_scenario_comparison(cfg)[0]
    assert res["persistent"] == res["retrained"]


def test_scenario_first_interval_identical(tmp_path):
    cfg = load_config(config_file(tmp_path, "schedule = reappearing\n"))
    results = run_scenario_comparison(cfg)
    for res in results.values():
        assert res["persistent"][0] == res["retrained"][0]
    text = write_scenario(results, tmp_path / "sc")
    assert "mean.retrained.interval_3_balanced_accuracy" in text


def test_main_verbs(tmp_path, capsys):
    assert main(["paramcount"]) == 0
    assert "packet (10 slots) = 183106" in capsys.readouterr().out
    assert main(["run", str(config_file(tmp_path)), "--set", "normalizer=robust"]) == 2
    assert "normalizer" in capsys.readouterr().err
    assert main(["gradcheck", "--draws", "2"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_retrained_pool_empty_at_interval_three():
    from conftest import inst
    from packetnet.cli import interval_reset
    from packetnet.evaluation import run_prequential
    from packetnet.packet import PacketConfig, PacketModel

    first, second = {1: 0.5, 2: -0.5}, {3: 1.0, 4: 0.2}
    stream = [inst(t, first if (t // 10) % 2 == 0 else second, t % 2) for t in range(50)]
    pools = {}

    def probe(name, cb=None):
        def inner(pos, model):
            if cb:
                cb(pos, model)
            if pos == 20:
                pools[name] = list(model.features)
        return inner

    cfg = PacketConfig(hidden=4)
    run_prequential(PacketModel(cfg, seed=0), stream, callback=probe("persistent"))
    run_prequential(PacketModel(cfg, seed=0), stream,
                    callback=probe("retrained", interval_reset(0, 50, 5)))
    assert pools["persistent"] == [1, 2, 3, 4]
    assert pools["retrained"] == []
