import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parpkit.autonet import AdamState, Param, ParamStore, adam_step
from parpkit.pruning import (
    BindingError,
    Mask,
    MaskFormatError,
    apply_zero,
    check_binding,
    freeze_apply,
    global_magnitude_mask,
    load_mask,
    mask_from_bytes,
    mask_to_bytes,
    ones_mask,
    prune_count,
    random_mask,
    save_mask,
    sparsity,
)


def store_of(*arrays):
    return ParamStore([Param(f"p{i}", np.asarray(a, dtype=np.float64), prunable=True) for i, a in enumerate(arrays)])


def test_prune_count_rounds_half_up():
    assert prune_count(0.5, 3) == 2
    assert prune_count(0.25, 10) == 3
    assert prune_count(1.0, 7) == 7
    with pytest.raises(ValueError):
        prune_count(1.5, 3)


def test_magnitude_mask_is_global():
    s = store_of([[10.0, -0.1]], [0.2, -5.0, 0.3])
    m = global_magnitude_mask(s, 0.6)
    assert m.bits["p0"].tolist() == [[True, False]]
    assert m.bits["p1"].tolist() == [False, True, False]


def test_ties_go_to_earlier_index():
    m = global_magnitude_mask(store_of([1.0, 1.0, 1.0, 1.0]), 0.5)
    assert m.bits["p0"].tolist() == [False, False, True, True]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=60), st.floats(0, 1))
def test_magnitude_count_and_exchange(values, s):
    store = store_of(values)
    keep = global_magnitude_mask(store, s).flat()
    mags = np.abs(np.asarray(values))
    assert (~keep).sum() == prune_count(s, len(values))
    if keep.any() and (~keep).any():
        assert mags[~keep].max() <= mags[keep].min()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**16), st.floats(0, 1), st.floats(0, 1))
def test_within_gives_nested_masks(seed, s1, s2):
    lo, hi = sorted((s1, s2))
    store = store_of(np.random.default_rng(seed).normal(size=50))
    outer = global_magnitude_mask(store, lo)
    inner = global_magnitude_mask(store, hi, within=outer)
    assert not np.any(inner.flat() & ~outer.flat())
    assert (~inner.flat()).sum() == prune_count(hi, 50)


def test_random_mask_exact_and_seeded():
    s = store_of(np.zeros(100), np.zeros((3, 7)))
    a, b = random_mask(s, 0.3, 1), random_mask(s, 0.3, 1)
    assert a == b
    assert a != random_mask(s, 0.3, 2)
    assert sparsity(a) == prune_count(0.3, 121) / 121


def test_mask_arrays_are_read_only():
    m = ones_mask(store_of([1.0, 2.0]))
    with pytest.raises(ValueError):
        m.bits["p0"][0] = False


def test_binding_checked():
    m = ones_mask(store_of([1.0, 2.0]))
    with pytest.raises(BindingError):
        check_binding(m, store_of([1.0, 2.0, 3.0]))
    with pytest.raises(BindingError):
        apply_zero(store_of([1.0]), m)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 9)), min_size=1, max_size=4), st.integers(0, 999),
       st.floats(0, 1))
def test_bytes_roundtrip(shapes, seed, s):
    store = store_of(*[np.random.default_rng(seed + i).normal(size=sh) for i, sh in enumerate(shapes)])
    m = random_mask(store, s, seed)
    back = mask_from_bytes(mask_to_bytes(m), store)
    assert back == m
    assert back.declared_sparsity == m.declared_sparsity
    assert all(back.bits[n].shape == m.bits[n].shape for n in m.names)


def test_file_roundtrip_and_flat_load(tmp_path):
    store = store_of(np.arange(6.0).reshape(2, 3))
    m = global_magnitude_mask(store, 0.5)
    save_mask(m, tmp_path / "m.parpmask")
    assert load_mask(tmp_path / "m.parpmask", store) == m
    assert load_mask(tmp_path / "m.parpmask") == m  # no template: flat per-param bits
    assert not list(tmp_path.glob("*.tmp"))


@pytest.mark.parametrize("damage", ["magic", "version", "truncate", "trailing"])
def test_corrupt_files_rejected(damage):
    data = bytearray(mask_to_bytes(ones_mask(store_of(np.ones(20)))))
    if damage == "magic":
        data[0:1] = b"X"
    elif damage == "version":
        data[8] = 9
    elif damage == "truncate":
        data = data[:-1]
    else:
        data += b"\0"
    with pytest.raises(MaskFormatError):
        mask_from_bytes(bytes(data))


def test_layout_mismatch_on_load():
    data = mask_to_bytes(ones_mask(store_of(np.ones(4))))
    with pytest.raises(BindingError):
        mask_from_bytes(data, store_of(np.ones(5)))


def test_apply_zero_keeps_grads():
    s = store_of([1.0, 2.0, 3.0])
    s["p0"].grad[:] = 1.0
    apply_zero(s, Mask.from_flat(s, np.array([True, False, True]), 1 / 3))
    assert s["p0"].value.tolist() == [1.0, 0.0, 3.0]
    assert s["p0"].grad.tolist() == [1.0, 1.0, 1.0]


def test_freeze_hook_pins_pruned_and_moments():
    s = store_of([1.0, 2.0])
    m = Mask.from_flat(s, np.array([True, False]), 0.5)
    apply_zero(s, m)
    hook = freeze_apply(s, m)
    opt = AdamState()
    for _ in range(3):
        s["p0"].grad[:] = [0.3, -0.7]
        adam_step(s, opt, 0.1)
        hook(s, opt)
        assert s["p0"].value[1] == 0.0
        assert opt.m["p0"][1] == 0.0 and opt.v["p0"][1] == 0.0
    assert s["p0"].value[0] != 1.0
