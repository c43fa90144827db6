import json
import math

import numpy as np
import pytest

from riskgrad import critic as C
from riskgrad import risk
from riskgrad import tensor as T
from riskgrad import trainer as TR
from riskgrad.checkpoint import Checkpoint
from riskgrad.config import TrainConfig, dump_config, load_config
from riskgrad.envs import RiskSpec, cliff_config, pointmass_config, racetrack_config
from riskgrad.errors import ConfigError, TrainingAborted
from riskgrad.metrics import FIELDS, MetricsRecord, export_metrics, load_records, summary_table


def tiny(**kw):
    base = dict(env=cliff_config(), hidden=[8], n_envs=2, steps=16, epochs=2, minibatch=16, n_fractions=8,
                cvar_samples=8, iterations=2, seed=7)
    return TrainConfig(**{**base, **kw})


@pytest.fixture(scope="module")
def trained():
    return TR.train(tiny())


def test_zero_iterations_is_initialization():
    cfg = tiny(iterations=0)
    ckpt, recs = TR.train(cfg)
    init = TR.build(cfg)
    assert recs == [] and ckpt.iteration == 0
    for p, arr in zip(init.actor.parameters(), ckpt.group("actor")):
        assert np.array_equal(p.data, arr)
    for p, arr in zip(init.critic.parameters(), ckpt.group("critic")):
        assert np.array_equal(p.data, arr)


def test_full_run_determinism(trained):
    again, _ = TR.train(tiny())
    assert again.digest() == trained[0].digest()
    other, _ = TR.train(tiny(seed=8))
    assert other.digest() != trained[0].digest()


def test_record_per_iteration(trained):
    ckpt, recs = trained
    assert [r.iteration for r in recs] == [1, 2] and ckpt.iteration == 2
    assert all(math.isfinite(r.critic_loss) and r.iqr_mean >= 0 for r in recs)


def test_checkpoint_roundtrip_bitwise(trained, tmp_path):
    ckpt = trained[0]
    path = ckpt.save(tmp_path / "a.ckpt")
    back = Checkpoint.load(path)
    assert back.to_bytes() == ckpt.to_bytes()
    s1, s2 = TR.from_checkpoint(ckpt), TR.from_checkpoint(back)
    obs = np.random.default_rng(0).normal(size=(5, 32))
    assert np.array_equal(s1.actor.logits_net(obs).data, s2.actor.logits_net(obs).data)
    assert np.array_equal(C.evaluate(s1.critic, obs, [0.1, 0.9]), C.evaluate(s2.critic, obs, [0.1, 0.9]))
    r1, r2 = TR.evaluate(ckpt, episodes=5, seed=3), TR.evaluate(back, episodes=5, seed=3)
    assert r1.row() == r2.row() and np.array_equal(r1.returns, r2.returns)


def test_resume_from_checkpoint_matches_uninterrupted():
    cfg = tiny(iterations=2)
    first, _ = TR.train(cfg.replace(iterations=1))
    state = TR.from_checkpoint(Checkpoint.from_bytes(first.to_bytes()))
    # the collector restarts its environment streams, so only the learner state is checked
    assert state.iteration == 1 and state.actor_opt.state.t == TR.from_checkpoint(first).actor_opt.state.t
    assert state.rng.bit_generator.state == first.rng


def test_checkpoint_format_errors(trained, tmp_path):
    raw = trained[0].to_bytes()
    with pytest.raises(ConfigError):
        Checkpoint.from_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ConfigError):
        Checkpoint.from_bytes(raw + b"\x00")
    with pytest.raises(ConfigError):
        Checkpoint.load(tmp_path / "missing.ckpt")
    ck = Checkpoint.from_bytes(raw)
    del ck.arrays["actor/0"]
    with pytest.raises(ConfigError):
        TR.from_checkpoint(ck)


def test_checkpoint_header_layout(trained):
    raw = trained[0].to_bytes()
    assert raw[:8] == b"RGCKPT\x00\x01"
    version = int.from_bytes(raw[8:12], "little")
    hlen = int.from_bytes(raw[12:20], "little")
    header = json.loads(raw[20 : 20 + hlen])
    assert version == 1 and header["iteration"] == 2
    total = sum(e["length"] for e in header["arrays"])
    assert len(raw) == 20 + hlen + 8 * total
    first = header["arrays"][0]
    arr = np.frombuffer(raw, "<f8", count=first["length"], offset=20 + hlen).reshape(first["shape"])
    assert np.array_equal(arr, trained[0].arrays[first["name"]])


def test_evaluate_is_deterministic_and_quantiles_recomputed(trained):
    a = TR.evaluate(trained[0], episodes=8, seed=11)
    b = TR.evaluate(trained[0], episodes=8, seed=11)
    assert a.row() == b.row()
    d = risk.EmpiricalDistribution(a.returns)
    for q, name in ((0.25, "q25"), (0.5, "q50"), (0.75, "q75")):
        assert getattr(a, name) == np.quantile(a.returns, q, method="inverted_cdf") == risk.quantile_at(d, q)
    assert a.cvar05 == risk.cvar_value(d, 0.5)


def test_risk_free_config_has_no_events(trained):
    rep = TR.evaluate(trained[0], cliff_config(risks=[]), episodes=10)
    assert rep.risk_events == 0.0


def test_evaluate_rejects_mismatched_env(trained):
    with pytest.raises(ConfigError):
        TR.evaluate(trained[0], pointmass_config(), episodes=2)
    with pytest.raises(ConfigError):
        TR.evaluate(trained[0], episodes=0)


def test_compare_self_gives_identical_rows(trained):
    rows = TR.compare([trained[0], trained[0]], cliff_config(), 6, seed=2, names=["a", "b"])
    assert {k: v for k, v in rows[0].items() if k != "name"} == {k: v for k, v in rows[1].items() if k != "name"}
    with pytest.raises(ConfigError):
        TR.compare([trained[0]], cliff_config(), 6)
    table = TR.format_table(rows)
    assert table.splitlines()[0].split("\t")[:3] == ["name", "episodes", "mean_return"]


def test_compare_with_meta_row():
    cfg = tiny(env=racetrack_config(horizon=30), iterations=1, hidden=[8])
    ck, _ = TR.train(cfg)
    from riskgrad.meta import MetaConfig

    rows = TR.compare([ck, ck], cfg.env, 4, meta=(ck, ck, MetaConfig(1.0)))
    assert [r["name"] for r in rows] == ["ckpt0", "ckpt1", "meta"]
    # identical snapshots: the meta controller acts exactly like either one
    assert rows[2]["mean_return"] == rows[0]["mean_return"]


def test_metrics_roundtrip_and_empty_run(tmp_path, trained):
    recs = trained[1]
    run = export_metrics(recs, tmp_path, seed=7, stamp="20260101-000000")
    assert run.name == "20260101-000000-seed7"
    back = load_records(run / "metrics.jsonl")
    assert summary_table(back) == (run / "summary.tsv").read_text()
    assert len(back) == len(recs)
    empty = export_metrics([], tmp_path, seed=1, stamp="x")
    assert (empty / "summary.tsv").read_text() == "\t".join(FIELDS) + "\n"
    assert len((empty / "metrics.jsonl").read_text().splitlines()) == 1


def test_metrics_nan_survives_roundtrip(tmp_path):
    run = export_metrics([MetricsRecord(iteration=1)], tmp_path, seed=0, stamp="s")
    (rec,) = load_records(run / "metrics.jsonl")
    assert rec.iteration == 1 and math.isnan(rec.mean_return)


def test_train_writes_run_directory(tmp_path):
    ckpt, recs = TR.train(tiny(iterations=1), out_dir=tmp_path)
    (run,) = list(tmp_path.iterdir())
    assert run.name.endswith("-seed7")
    assert Checkpoint.load(run / "final.ckpt").digest() == ckpt.digest()
    assert len(load_records(run / "metrics.jsonl")) == 1


def test_non_finite_loss_checkpoints_and_aborts(tmp_path, monkeypatch):
    monkeypatch.setattr(C, "critic_loss", lambda *a, **k: T.Tensor(np.nan))
    with pytest.raises(TrainingAborted) as info:
        TR.train(tiny(iterations=1), out_dir=tmp_path)
    assert info.value.checkpoint_path == tmp_path / "aborted.ckpt"
    assert Checkpoint.load(tmp_path / "aborted.ckpt").iteration == 0


def test_config_defaults_and_validation(tmp_path):
    cfg = TrainConfig()
    assert (cfg.clip, cfg.lam, cfg.gamma, cfg.lr, cfg.eta, cfg.n_fractions) == (0.2, 0.95, 0.99, 1e-3, 0.5, 64)
    for bad in ({"eta": 0.0}, {"eta": 1.5}, {"gamma": 1.0}, {"n_envs": 0}, {"hidden": []}, {"iterations": -1}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 1.0})


def test_config_file_roundtrip_and_overrides(tmp_path):
    cfg = tiny(env=pointmass_config(risks=[RiskSpec("speed", 1.0, 50.0, 0.1)]))
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    assert back == cfg
    assert load_config(path, eta=1.0, seed=None).eta == 1.0
    assert load_config(path, env_name="cliff").env.env == "cliff"
    assert load_config(None) == TrainConfig()
    partial = tmp_path / "p.yaml"
    partial.write_text("env:\n  env: racetrack\n  params:\n    gust: 0.25\niterations: 3\n")
    got = load_config(partial)
    assert got.iterations == 3 and got.env.params["gust"] == 0.25 and got.env.params["segment_length"] == 2.0


@pytest.mark.parametrize("text", ["- a\n- b\n", "iterations: [\n", "env: {env: moon}\n"])
def test_bad_config_files(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_collection_thread_count_does_not_change_results(monkeypatch):
    monkeypatch.setenv("RISKGRAD_THREADS", "1")
    a, _ = TR.train(tiny(iterations=1))
    monkeypatch.setenv("RISKGRAD_THREADS", "3")
    b, _ = TR.train(tiny(iterations=1))
    assert a.digest() == b.digest()


def test_no_risk_cliff_eta_is_inert():
    env = cliff_config(risks=[]).with_params(slip=0.0)
    kw = dict(env=env, hidden=[32], n_envs=8, steps=32, minibatch=128, n_fractions=16, iterations=40, gamma=0.9,
              lam=0.5, seed=1)
    reps = [TR.evaluate(TR.train(tiny(**kw, eta=eta))[0], episodes=20) for eta in (1.0, 0.5)]
    se = math.sqrt(sum(np.var(r.returns) / r.episodes for r in reps))
    assert abs(reps[0].mean_return - reps[1].mean_return) <= 3 * se + 1e-12
    assert min(r.mean_return for r in reps) > 0.0
