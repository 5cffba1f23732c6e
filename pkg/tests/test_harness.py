import json

import numpy as np
import pytest

from vasis_lab.harness import CheckpointError, ConfigError, ExperimentConfig, load_checkpoint, save_checkpoint
from vasis_lab.harness import commands
from vasis_lab.harness.checkpoint import read_checkpoint
from vasis_lab.harness.cli import main
from vasis_lab.training import NonFiniteLossError

TINY = {
    "dataset": {"family": "sky_road", "num_classes": 2, "resolution": 32, "amplitudes": [0.0, 0.4], "count": 8},
    "generator": {"base_channels": 8, "hidden": 8, "num_blocks": 3, "init_res": 4, "latent_dim": 16},
    "discriminator": {"base_channels": 8},
    "recipe": {"steps": 4, "batch_size": 2},
    "eval": {"every": 2, "num_samples": 8, "heldout_count": 8, "checkpoint_every": 2, "log_every": 1},
}


def tiny(tmp_path, name="run", **over):
    data = json.loads(json.dumps(TINY))
    for key, val in over.items():
        data.setdefault(key, {}).update(val) if isinstance(val, dict) else data.__setitem__(key, val)
    data["output_dir"] = str(tmp_path / name)
    return ExperimentConfig.from_dict(data)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    cfg = tiny(tmp)
    commands.cmd_make_dataset(cfg)
    commands.cmd_train(cfg, log=lambda _: None)
    return cfg


def quiet(_):
    pass


def test_config_round_trip(tmp_path):
    cfg = tiny(tmp_path)
    cfg.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back == cfg and back.config_hash() == cfg.config_hash()
    assert ExperimentConfig.from_dict(json.loads(cfg.to_json())) == cfg


def test_config_hash_ignores_output_dir_only(tmp_path):
    cfg = tiny(tmp_path)
    assert cfg.replace(output_dir="elsewhere").config_hash() == cfg.config_hash()
    assert cfg.replace(seed=1).config_hash() != cfg.config_hash()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="recipe.stepz"):
        ExperimentConfig.from_dict({"recipe": {"stepz": 3}})
    with pytest.raises(ConfigError, match="resolution"):
        ExperimentConfig.from_dict({"generator": {"num_blocks": 3}})
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.load(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        ExperimentConfig.load(tmp_path / "bad.json")


def test_make_dataset_refuses_then_forces(tmp_path):
    cfg = tiny(tmp_path)
    train, heldout = commands.cmd_make_dataset(cfg)
    assert train.is_dir() and heldout.is_dir()
    with pytest.raises(FileExistsError):
        commands.cmd_make_dataset(cfg)
    commands.cmd_make_dataset(cfg, force=True)


def test_train_writes_checkpoints_and_best_pointer(trained):
    run = commands.RunDir(trained.output_dir)
    names = {p.name for p in run.checkpoints.iterdir()}
    assert {"latest.npz", "best.npz", "best.json", "final.npz", "step_000002.npz", "step_000004.npz"} <= names
    fids = {}
    for line in run.log.read_text().splitlines():
        fields = dict(f.split("=", 1) for f in line.split())
        assert fields["config"] == trained.config_hash()
        fids[int(fields["step"])] = float(fields["fid_t"])
    best = json.loads((run.checkpoints / "best.json").read_text())
    assert best["step"] == min(fids, key=fids.get)
    assert read_checkpoint(run.checkpoints / "best.npz")["meta/step"] == best["step"]


def test_checkpoint_round_trip_is_bit_exact(trained, tmp_path):
    src = commands.RunDir(trained.output_dir).checkpoints / "final.npz"
    state, cfg = load_checkpoint(src)
    assert cfg == trained and state.step == 4
    save_checkpoint(tmp_path / "again.npz", state, cfg)
    a, b = read_checkpoint(src), read_checkpoint(tmp_path / "again.npz")
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k]), k


def test_checkpoint_rejects_other_config_and_missing_file(trained, tmp_path):
    src = commands.RunDir(trained.output_dir).checkpoints / "final.npz"
    with pytest.raises(CheckpointError, match="written by config"):
        load_checkpoint(src, trained.replace(seed=9))
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "nope.npz")
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.npz")


def test_resume_matches_uninterrupted_run(trained, tmp_path):
    cfg = trained.replace(output_dir=str(tmp_path / "resumed"), dataset_dir=str(trained.data_root))
    commands.cmd_train(cfg, steps=2, log=quiet)
    commands.cmd_train(cfg, resume=commands.RunDir(cfg.output_dir).checkpoints / "step_000002.npz", log=quiet)
    a = read_checkpoint(commands.RunDir(trained.output_dir).checkpoints / "final.npz")
    b = read_checkpoint(commands.RunDir(cfg.output_dir).checkpoints / "final.npz")
    for k in a:
        if k != "meta/config":
            assert np.array_equal(a[k], b[k]), k


def test_train_refuses_foreign_run_dir(trained):
    with pytest.raises(CheckpointError, match="different config"):
        commands.cmd_train(trained.replace(seed=5), steps=0, log=quiet)


def test_nonfinite_loss_writes_bundle(tmp_path):
    cfg = tiny(tmp_path, recipe={"lr_d": 1e30, "lr_g": 1e30, "steps": 20})
    commands.cmd_make_dataset(cfg)
    with pytest.raises(NonFiniteLossError) as info:
        commands.cmd_train(cfg, log=quiet)
    exc = info.value
    assert exc.seed == cfg.seed and exc.step >= 0
    bundle = json.loads(open(exc.parts["bundle"]).read())
    assert bundle["config_hash"] == cfg.config_hash() and bundle["step"] == exc.step
    assert any(not np.isfinite(float(v)) for k, v in bundle["losses"].items())


def test_eval_is_deterministic_and_reports_costs(trained):
    ckpt = commands.RunDir(trained.output_dir).checkpoints / "final.npz"
    a = commands.cmd_eval(trained, ckpt)
    path = commands.RunDir(trained.output_dir).reports / "eval_final.kv"
    first = path.read_bytes()
    b = commands.cmd_eval(trained, ckpt)
    assert a == b and path.read_bytes() == first
    kv = commands.read_kv(path)
    assert kv["config_hash"] == trained.config_hash()
    for key in ("fid_t", "fid_v", "miou", "acc", "g.params", "g.flops"):
        assert key in kv, key
    assert 0 <= float(kv["acc"]) <= 1


def test_eval_missing_checkpoint(trained, tmp_path):
    with pytest.raises(CheckpointError):
        commands.cmd_eval(trained, tmp_path / "missing.npz")


def test_probe_report_contents(trained):
    values = commands.cmd_probe(trained)
    assert values["collapse.baseline"] == pytest.approx(1.0, abs=1e-9)
    assert values["collapse.vasis"] < 1
    assert values["ablation.reflect.k1.collapse"] == pytest.approx(1.0, abs=1e-9)
    text = (commands.RunDir(trained.output_dir).reports / "probe.txt").read_text()
    assert text.startswith("# probe (untrained)\n# config_hash=" + trained.config_hash())
    assert "ablation" in text and "collapse" in text
    assert (commands.RunDir(trained.output_dir).grids / "probe.png").is_file()


def test_count_directions(tmp_path):
    cfg = tiny(tmp_path)
    commands.cmd_count(cfg)
    kv = commands.read_kv(commands.RunDir(cfg.output_dir).reports / "count.kv")
    mod = lambda name: int(kv[f"{name}.modulation_params"])  # noqa: E731
    # halving only pays off where the semantic path has convs to shrink
    assert mod("variant.spade_conv.concat") < mod("toggle.spade_conv.baseline")
    for path in ("spade_conv", "clade_sample"):
        assert mod(f"variant.{path}.plus") > mod(f"variant.{path}.concat")
        assert mod(f"variant.{path}.one_channel") <= mod(f"variant.{path}.concat")
    assert mod("toggle.clade_sample.baseline") < mod("toggle.spade_conv.baseline")


def test_generate_writes_png(trained, tmp_path):
    out = commands.cmd_generate(trained, None, count=2, out=tmp_path / "g.png")
    assert out.is_file() and out.stat().st_size > 0


def test_cli_exit_codes(trained, tmp_path, capsys):
    assert main([]) == 2
    assert main(["count", "-c", str(tmp_path / "missing.json")]) == 3
    cfg_path = tmp_path / "tiny.json"
    tiny(tmp_path, name="fresh").save(cfg_path)
    assert main(["train", "-c", str(cfg_path)]) == 4
    assert main(["eval", "-c", str(cfg_path), "--checkpoint", str(tmp_path / "x.npz")]) == 5
    assert main(["make-dataset", "-c", str(cfg_path)]) == 0
    assert main(["make-dataset", "-c", str(cfg_path)]) == 4
    assert main(["init-config", str(tmp_path / "default.json")]) == 0
    assert ExperimentConfig.load(tmp_path / "default.json") == ExperimentConfig()


def test_cli_reports_are_byte_identical_across_runs(tmp_path):
    cfg_path = tmp_path / "tiny.json"
    tiny(tmp_path, name="a").save(cfg_path)
    outputs = []
    for name in ("a", "b"):
        assert main(["count", "--no-verify", "-c", str(cfg_path), "-o", str(tmp_path / name)]) == 0
        outputs.append((tmp_path / name / "reports" / "count.txt").read_bytes())
    assert outputs[0] == outputs[1]
