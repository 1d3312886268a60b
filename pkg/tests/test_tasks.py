import numpy as np
import pytest
from sklearn.cluster import KMeans

from parpkit.autonet import EncoderModel, ModelConfig
from parpkit.tasks import (
    MultiTask,
    SequenceTask,
    TaskSpec,
    collapse_runs,
    edit_distance,
    gen_language_task,
    gen_pretrain_corpus,
    load_dataset,
    load_or_generate,
    pretrain,
    save_dataset,
    task_templates,
)
from parpkit.training import TrainConfig

SMALL = dict(n_train=40, n_dev=10, n_test=10)


def test_generation_is_deterministic():
    a = gen_language_task(TaskSpec("lang-00", **SMALL))
    b = gen_language_task(TaskSpec("lang-00", **SMALL))
    assert a.checksum() == b.checksum()
    assert a.checksum() != gen_language_task(TaskSpec("lang-00", seed=1, **SMALL)).checksum()


def test_labels_are_collapsed_frame_labels():
    ds = gen_language_task(TaskSpec("lang-00", **SMALL))
    for seq in ds.train:
        assert seq.labels.tolist() == collapse_runs(seq.frame_labels).tolist()
        assert 8 <= seq.length <= 24
        # adjacent symbols differ, so no CTC target ever needs a separating blank
        assert all(a != b for a, b in zip(seq.labels, seq.labels[1:]))


def test_kmeans_recovers_templates():
    spec = TaskSpec("lang-00", noise=0.3, n_train=200, **{k: v for k, v in SMALL.items() if k != "n_train"})
    ds = gen_language_task(spec)
    frames = np.vstack([s.features for s in ds.train])
    km = KMeans(n_clusters=spec.vocab_size, n_init=5, random_state=0).fit(frames)
    # each template sits next to exactly one centroid
    dist = np.linalg.norm(ds.templates[:, None, :] - km.cluster_centers_[None], axis=2)
    assert sorted(dist.argmin(axis=1).tolist()) == list(range(spec.vocab_size))
    assert dist.min(axis=1).max() < 0.2


def test_shared_templates():
    base = TaskSpec("lang-00", **SMALL)
    shared = TaskSpec("lang-01", seed=1, share_with=base, overlap=0.5, **SMALL)
    a, b = task_templates(base), task_templates(shared)
    np.testing.assert_array_equal(a[:3], b[:3])
    assert not np.allclose(a[3:], b[3:])


def test_shared_spec_survives_cache(tmp_path):
    base = TaskSpec("lang-00", **SMALL)
    ds = gen_language_task(TaskSpec("lang-01", seed=1, share_with=base, overlap=0.5, **SMALL))
    back = load_dataset(save_dataset(ds, tmp_path / "s.data"))
    assert back.spec == ds.spec and back.spec.share_with == base


def test_dataset_cache_roundtrip(tmp_path):
    ds = gen_language_task(TaskSpec("lang-00", **SMALL))
    path = save_dataset(ds, tmp_path / "d.data")
    back = load_dataset(path)
    assert back.checksum() == ds.checksum() and back.spec == ds.spec
    assert load_or_generate(ds.spec, tmp_path / "cache").checksum() == ds.checksum()
    assert load_or_generate(ds.spec, tmp_path / "cache").checksum() == ds.checksum()  # now from disk
    data = bytearray(path.read_bytes())
    data[-3] ^= 1
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError):
        load_dataset(path)


def test_edit_distance():
    assert edit_distance([1, 2, 3], [1, 3]) == 1
    assert edit_distance([], [4, 4]) == 2
    assert edit_distance([1, 2], [2, 1]) == 2


@pytest.fixture(scope="module")
def model():
    return EncoderModel(ModelConfig(hidden_dim=8, n_blocks=1))


def test_sequence_task_learns(model):
    task = SequenceTask(model, gen_language_task(TaskSpec("lang-00", noise=0.3, n_train=100, n_dev=20, n_test=20)))
    from parpkit.methods import finetune_dense

    theta0 = model.init_encoder(0)
    before = task.evaluate(task.attach(theta0), "dev")["loss"]
    after = task.evaluate(finetune_dense(theta0, task, TrainConfig(total_updates=150, peak_lr=1e-2)).store, "dev")
    assert after["loss"] < 0.5 * before
    assert 0.0 <= after["error_rate"] <= 1.0


def test_multitask_round_robin(model):
    tasks = [SequenceTask(model, gen_language_task(TaskSpec(f"lang-{i:02d}", seed=i, **SMALL))) for i in range(3)]
    multi = MultiTask(tasks)
    rng = np.random.default_rng(0)
    assert [multi.sample_batch(rng, 2).task_id for _ in range(4)] == ["lang-00", "lang-01", "lang-02", "lang-00"]
    multi.reset_stream()
    assert multi.sample_batch(rng, 2).task_id == "lang-00"


@pytest.mark.parametrize("objective", ["masked-recon", "contrastive"])
def test_pretraining_lowers_its_loss(model, objective):
    corpus = gen_pretrain_corpus(0, 100)
    theta0, trainer = pretrain(model, corpus, objective, TrainConfig(total_updates=200, peak_lr=5e-3),
                               return_trainer=True)
    losses = [loss for _, _, loss in trainer.trace]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
    assert theta0.names() == model.init_encoder(0).names()  # SSL head dropped
