import csv
import json

import numpy as np
import pytest

from parpkit.analytics import random_iou_baseline
from parpkit.autonet import ConfigurationError, EncoderModel, ModelConfig, Param, ParamStore
from parpkit.harness import (
    ExperimentConfig,
    PretrainSpec,
    RecordParseError,
    RunRecord,
    Suite,
    ablation_initial_mask,
    atomic_write,
    iou_report,
    report,
    run,
    run_dir,
    run_single,
    sparsity_sweep,
    transfer_matrix,
)
from parpkit.harness import cli, experiments
from parpkit.pruning import random_mask
from parpkit.training import TrainConfig


@pytest.fixture
def tiny(tmp_path):
    return ExperimentConfig(
        model=ModelConfig(hidden_dim=6, n_blocks=1),
        pretrain=PretrainSpec(steps=10, corpus_size=20),
        train=TrainConfig(total_updates=6, prune_interval=2, peak_lr=1e-3),
        out_dir=str(tmp_path / "out"),
    )


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_digest_is_canonical_and_ignores_out_dir(tiny):
    same = ExperimentConfig.from_dict(json.loads(tiny.to_json()))
    assert same.digest == tiny.digest
    assert tiny.replace(out_dir="/elsewhere").digest == tiny.digest
    assert tiny.replace(seeds=(1,)).digest != tiny.digest
    assert json.loads(tiny.to_json())["train"]["peak_lr"] == 1e-3  # numbers stay numbers


@pytest.mark.parametrize("field,value", [("methods", ("lth",)), ("kind", "grid"), ("mode", "warm"),
                                         ("sparsities", (1.5,)), ("seeds", ())])
def test_bad_config_names_field(field, value):
    with pytest.raises(ConfigurationError, match=field):
        ExperimentConfig(**{field: value})


def test_unknown_task_is_config_error(tiny):
    with pytest.raises(ConfigurationError, match="tasks"):
        Suite(tiny).task("klingon")


def test_sweep_accounting(tiny):
    cfg = tiny.replace(methods=("rp", "parp"), sparsities=(0.0, 0.5), seeds=(0, 1))
    res = sparsity_sweep(cfg)
    root = run_dir(cfg)
    rows = _rows(root / "curve.csv")
    assert rows[0] == ["sparsity", "method", "seed", "final_dev", "final_test"]
    assert len(rows) - 1 == 2 * 2 * 2 == len(res.children) == len(list((root / "runs").glob("*/record.json")))
    dense = {r.seed: r.final["dev_loss"] for r in res.children if r.sparsity == 0.0 and r.method == "rp"}
    for r in res.children:
        if r.sparsity == 0.0:
            assert r.final["dev_loss"] == dense[r.seed]
    assert set(res.curve("parp")) == {0.0, 0.5}


def test_nine_point_sweep(tiny):
    cfg = tiny.replace(methods=("mpi",), sparsities=tuple(np.round(np.arange(1, 10) / 10, 1).tolist()))
    run(cfg)
    root = run_dir(cfg)
    assert len(list((root / "runs").glob("*/record.json"))) == 9
    assert len(_rows(root / "curve.csv")) == 10


def test_rerun_is_identical(tiny):
    cfg = tiny.replace(methods=("parp",), sparsities=(0.5,))
    a = run(cfg)
    first = (run_dir(cfg) / "curve.csv").read_bytes()
    b = run(cfg)
    assert (run_dir(cfg) / "curve.csv").read_bytes() == first
    child_a = RunRecord.load(run_dir(cfg) / a.children[0] / "record.json")
    assert a.digest == b.digest and child_a.trace and child_a.mask_checksums


def test_identical_initial_masks_give_zero_delta(tiny):
    suite = Suite(tiny)
    a = run_single(suite, "parp", "lang-00", 0.5, 0, suite.root / "a")
    b = run_single(suite, "parp", "lang-00", 0.5, 0, suite.root / "b")
    assert a.final["dev_loss"] - b.final["dev_loss"] == 0.0


def test_ablation_pairs(tiny):
    cfg = tiny.replace(kind="ablation", sparsities=(0.5,), seeds=(0,))
    res = ablation_initial_mask(cfg)
    rp_rec, mpi_rec = res.pairs[0]
    diff = {k for k in rp_rec.config if rp_rec.config[k] != mpi_rec.config[k]}
    assert diff == {"initial_mask"}
    assert res.deltas[0] == mpi_rec.final["dev_loss"] - rp_rec.final["dev_loss"]


def test_transfer_matrix_shape(tiny):
    cfg = tiny.replace(kind="transfer-matrix", methods=("omp",), tasks=("lang-00", "lang-01"), sparsities=(0.5,))
    res = transfer_matrix(cfg)
    assert res.deltas.shape == (3, 2) and res.row_labels[-1] == "rp"
    np.testing.assert_array_equal(np.diag(res.deltas[:2]), 0.0)
    assert len(_rows(run_dir(cfg) / "matrix.csv")) == 4
    parp_res = transfer_matrix(cfg.replace(mode="parp"), masks=res.masks)
    assert parp_res.masks.keys() == res.masks.keys()


def test_iou_report_rows():
    store = ParamStore([Param("w", np.random.default_rng(0).normal(size=10_000), prunable=True)])
    m = random_mask(store, 0.5, 1)
    ious, overlaps = iou_report([("a", m), ("b", m)], store, 0.5, seed=7)
    assert np.all(ious.values[:2] == 1.0)
    assert ious.row_labels == ("a", "b", "mpi", "rp")
    assert abs(ious.values[3].mean() - random_iou_baseline(0.5)) < 0.02
    assert overlaps.values[0, 0] == 0.5


def test_report_tables(tiny, tmp_path):
    empty = report(str(tmp_path / "nothing" / "*.json"), tmp_path / "rep0")
    assert empty.runs == [] and _rows(tmp_path / "rep0" / "runs.csv") == [list(experiments.RUNS_HEADER)]
    cfg = tiny.replace(methods=("imp",), sparsities=(0.5,))
    run(cfg)
    rep = report(str(run_dir(cfg)), tmp_path / "rep1")
    assert len(rep.runs) == 1 == len(rep.metrics)
    method, _, s, _, runs, steps, discovery = rep.runs[0]
    assert (method, s, discovery, runs, steps) == ("imp", 0.5, 7, 8, 6)


def test_report_trajectory(tiny, tmp_path):
    cfg = tiny.replace(methods=("parp",), sparsities=(0.5,))
    run(cfg)
    rep = report(str(run_dir(cfg)))
    assert [row[4] for row in rep.trajectory] == [1, 2, 3]


def test_malformed_record_named(tmp_path):
    bad = tmp_path / "r" / "record.json"
    atomic_write(bad, "{not json")
    with pytest.raises(RecordParseError, match="record.json"):
        report(str(tmp_path / "r"))


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write(tmp_path / "x.csv", "a\n")
    atomic_write(tmp_path / "x.csv", "b\n")
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]
    assert (tmp_path / "x.csv").read_text() == "b\n"


def test_record_is_frozen(tiny):
    rec = RunRecord(digest="d", code_version="0", kind="run", config={})
    with pytest.raises(AttributeError):
        rec.digest = "e"


# ---- CLI

def _cli(tiny, tmp_path, *argv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(tiny.to_json())
    return cli.main([argv[0], "--config", str(cfg), *argv[1:]])


def test_cli_parp_and_analyze(tiny, tmp_path, capsys):
    assert _cli(tiny, tmp_path, "parp", "--sparsity", "0.5") == 0
    out = json.loads(capsys.readouterr().out)
    assert "final" in out and out["runs_consumed"] == 1
    masks = sorted(str(p) for p in (tmp_path / "out").rglob("mask.parpmask"))
    assert cli.main(["analyze", "layerwise", masks[0]]) == 0
    assert capsys.readouterr().out.startswith("layer,sparsity,elements")
    rec_dir = [p.parent for p in (tmp_path / "out").rglob("mask.parpmask")][0]
    assert cli.main(["analyze", "trajectory", str(rec_dir)]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3
    assert cli.main(["report", str(tmp_path / "out"), "--out", str(tmp_path / "rep")]) == 0


def test_cli_env_out_root(tiny, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PARPKIT_OUT", str(tmp_path / "env"))
    small = ["--steps", "4", "--interval", "2", "--from", str(tmp_path / "ck.npz")]
    Suite(tiny).model.init_encoder(0).save(tmp_path / "ck.npz")
    assert cli.main(["prune", "--method", "rp", "--sparsity", "0.5", *small]) == 1  # model mismatch
    EncoderModel(ExperimentConfig().model).init_encoder(0).save(tmp_path / "ck.npz")
    assert cli.main(["prune", "--method", "rp", "--sparsity", "0.5", *small]) == 0
    assert list((tmp_path / "env").rglob("record.json"))


def test_cli_exit_codes(tiny, tmp_path, monkeypatch, capsys):
    assert cli.main(["sweep", "--methods", "lth", "--sparsities", "0.5"]) == 1
    assert cli.main(["parp", "--sparsity", "0.5", "--from", str(tmp_path / "missing.npz")]) == 1
    assert cli.main(["prune", "--method", "zz", "--sparsity", "0.5"]) == 1
    assert _cli(tiny, tmp_path, "parp", "--sparsity", "0.5", "--initial-mask", str(tmp_path / "none.parpmask")) == 1
    bad = tmp_path / "bad.parpmask"
    bad.write_bytes(b"PARPMASK\x07")
    assert _cli(tiny, tmp_path, "parp", "--sparsity", "0.5", "--initial-mask", str(bad)) == 1

    def explode(*a, **k):
        raise FloatingPointError("boom")
    monkeypatch.setattr(experiments, "run_pipeline", explode)
    assert _cli(tiny, tmp_path, "parp", "--sparsity", "0.5") == 2
    assert "parp on lang-00" in capsys.readouterr().err
