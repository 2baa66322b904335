import math
import os
import pathlib

import pytest

import proxlab

CONFIG = pathlib.Path(os.environ.get("PROXLAB_SOURCE_DIR", pathlib.Path(__file__).parents[2])) / "configs" / "digit_sum.json"
SMALL = ["train.max_steps=4", "train.eval_every=2", "train.prompt_batch=4", "policy.hidden=8", "train.eval_prompts=8"]


def test_alpha_and_prox():
    assert proxlab.alpha(0) == 0.0
    assert proxlab.alpha(4) == 0.25
    assert proxlab.approx_prox_logp([-1.0], [-3.0], [8], 10) == [-2.0]
    with pytest.raises(proxlab.VersionError):
        proxlab.approx_prox_logp([-1.0], [-3.0], [11], 10)


def test_losses():
    c = proxlab.coupled_ppo_loss([-1.0], [-1.0], [2.0], 0.2)
    assert c["objective"] == 2.0
    assert c["grad"] == [2.0]
    d = proxlab.decoupled_loss([-1.0], [-1.0], [-1.0], [2.0], 0.2)
    assert d["objective"] == 2.0
    clipped = proxlab.coupled_ppo_loss([0.0], [-1.0], [1.0], 0.2)
    assert clipped["objective"] == pytest.approx(1.2)
    assert clipped["clipped_tokens"] == 1
    assert clipped["iw_max"] == pytest.approx(math.e)


def test_grpo():
    adv = proxlab.grpo_advantages([1.0, 0.0, 0.5, 0.5], [0, 0, 1, 1])
    assert adv[0] + adv[1] == pytest.approx(0.0)
    assert adv[2:] == [0.0, 0.0]


def test_config_errors():
    cfg = proxlab.load_config(CONFIG, ["train.eps_clip=0.3"])
    assert cfg["train"]["eps_clip"] == 0.3
    with pytest.raises(proxlab.ConfigError):
        proxlab.load_config(CONFIG, ["train.eps_clip=-1"])


def test_run_and_summarize(tmp_path):
    r = proxlab.run_experiment(CONFIG, SMALL + [f'output_dir="{tmp_path}"', 'train.prox_strategy="recompute"'])
    assert r["summary"]["steps"] == 4
    assert r["summary"]["forward_pass_total"] == 4
    assert proxlab.summarize(r["run_dir"]) == r["summary"]


def test_diagnostics():
    assert proxlab.gradcheck(10)["passed"]
    b = proxlab.bench_prox(16, 64, 3)
    assert b["loglinear_forward_pass_count"] == 0


def test_cli():
    code, out, _ = proxlab.cli(["gradcheck", "--trials", "5"])
    assert code == 0 and "PASS" in out
    assert proxlab.cli(["train", "--config", "/missing.json"])[0] == 2
