import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parpkit.analytics import (
    iou,
    iou_matrix,
    layerwise_sparsity,
    mask_trajectory,
    overlap_matrix,
    overlap_pct,
    random_iou_baseline,
)
from parpkit.autonet import EncoderModel, ModelConfig, Param, ParamStore
from parpkit.pruning import BindingError, Mask, global_magnitude_mask, random_mask


def _layout(d=40):
    return ParamStore([Param("a", np.zeros((4, d // 8)), prunable=True), Param("b", np.zeros(d // 2), prunable=True)])


def _mask(store, flat):
    return Mask.from_flat(store, np.asarray(flat, dtype=bool), 0.0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.booleans(), min_size=40, max_size=40), st.lists(st.booleans(), min_size=40, max_size=40))
def test_iou_against_sets(x, y):
    store = _layout()
    a, b = _mask(store, x), _mask(store, y)
    sa = {i for i, v in enumerate(x) if v}
    sb = {i for i, v in enumerate(y) if v}
    assert iou(a, b) == (len(sa & sb) / len(sa | sb) if sa | sb else 1.0)
    assert iou(a, b) == iou(b, a)
    assert overlap_pct(a, b) == len(sa & sb) / 40
    assert overlap_pct(a, b) <= iou(a, b)


def test_iou_of_empty_masks_is_one():
    store = _layout()
    empty = _mask(store, [False] * 40)
    assert iou(empty, empty) == 1.0
    assert overlap_pct(empty, empty) == 0.0


def test_layout_mismatch():
    with pytest.raises(BindingError):
        iou(_mask(_layout(40), [True] * 40), _mask(_layout(48), [True] * 48))


def test_random_baseline():
    assert random_iou_baseline(0.5) == pytest.approx(1 / 3)
    assert random_iou_baseline(0.0) == 1.0
    with pytest.raises(ValueError):
        random_iou_baseline(-0.1)


def test_matrix_shape_and_extra_rows():
    store = ParamStore([Param("w", np.random.default_rng(0).normal(size=1000), prunable=True)])
    masks = [(f"t{i}", random_mask(store, 0.5, i)) for i in range(3)]
    m = iou_matrix(masks, [("mpi", global_magnitude_mask(store, 0.5)), ("rp", random_mask(store, 0.5, 99))])
    assert m.values.shape == (5, 3)
    assert m.row_labels[-2:] == ("mpi", "rp")
    np.testing.assert_array_equal(np.diag(m.values[:3]), 1.0)
    np.testing.assert_allclose(m.values[:3], m.values[:3].T)
    lines = m.to_csv().splitlines()
    assert lines[0] == "row,t0,t1,t2" and len(lines) == 6
    same = iou_matrix([("a", masks[0][1]), ("b", masks[0][1])])
    assert np.all(same.values == 1.0)
    assert np.all(overlap_matrix([("a", masks[0][1])]).values == 0.5)


def test_layerwise_profile_weights_back_to_global():
    model = EncoderModel(ModelConfig(hidden_dim=6, n_blocks=3))
    store = model.init_encoder(0)
    prof = layerwise_sparsity(global_magnitude_mask(store, 0.7))
    assert [label for label, _, _ in prof.layers] == ["block0", "block1", "block2"]
    assert prof.weighted_mean() == pytest.approx(prof.global_sparsity)
    assert prof.global_sparsity == pytest.approx(0.7, abs=1 / store.d_prunable)


def test_trajectory():
    store = _layout()
    ref = _mask(store, [True] * 20 + [False] * 20)
    assert mask_trajectory([ref, _mask(store, [True] * 40)], ref) == [1.0, 0.5]
