import numpy as np
import pytest

from evenhancer import easm as E
from evenhancer.events import EventStream, reverse, segments_for
from evenhancer.tensor_core import ContractError, deform_conv2d
from evenhancer.weights import init_weights
from oracles import conv2d_ref, easm_ref


def store_for(C=4, seed=42):
    return init_weights(E.easm_shapes(C), seed)


def toy_stream(h=6, w=6, n=80, seed=0):
    r = np.random.default_rng(seed)
    return EventStream(r.uniform(0, 1, n), r.integers(0, w, n), r.integers(0, h, n), r.choice([-1, 1], n),
                       (h, w), (0.0, 1.0))


def toy_frames(h=6, w=6, seed=1):
    return np.random.default_rng(seed).uniform(0, 1, (2, 3, h, w)).astype(np.float32)


def test_zero_inputs_give_zero_features():
    store = store_for().zero("easm.extract")
    segs = np.zeros((3, 2, 5, 5))
    f, ef, eb = E.extract_initial(np.zeros((2, 3, 5, 5)), segs, segs, store)
    assert f.shape == (2, 4, 5, 5) and ef.shape == (3, 4, 5, 5)
    assert not f.any() and not ef.any() and not eb.any()


def test_extractor_identity_kernel():
    # conv0 copies the three colour channels, the residual branch is zero
    store = store_for(C=3).zero("easm.extract")
    ker = np.zeros((3, 3, 3, 3), dtype=np.float32)
    for c in range(3):
        ker[c, c, 1, 1] = 1
    store["easm.extract.frame.conv0.weight"] = ker
    frames = toy_frames()
    segs = np.zeros((2, 2, 6, 6))
    f, _, _ = E.extract_initial(frames, segs, segs, store)
    np.testing.assert_allclose(f, frames, atol=1e-7)


def test_extractor_matches_conv_stack_oracle():
    store = store_for()
    frames = toy_frames()
    segs = np.zeros((2, 2, 6, 6))
    f, _, _ = E.extract_initial(frames, segs, segs, store)

    def c(x, n):
        return conv2d_ref(x, store[f"easm.extract.frame.{n}.weight"], store[f"easm.extract.frame.{n}.bias"], 1, 1)

    lrelu = lambda v: np.where(v >= 0, v, 0.1 * v)  # noqa: E731
    y = lrelu(c(frames, "conv0"))
    np.testing.assert_allclose(f, y + c(lrelu(c(y, "res.conv1")), "res.conv2"), atol=1e-4)


def test_extractor_shape_checks():
    store = store_for()
    with pytest.raises(ContractError):
        E.extract_initial(np.zeros((3, 3, 4, 4)), np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 4, 4)), store)
    with pytest.raises(ContractError):
        E.extract_initial(np.zeros((2, 3, 4, 4)), np.zeros((1, 2, 3, 4)), np.zeros((1, 2, 3, 4)), store)


def test_pyramid_uses_ceil_division():
    levels = E.build_pyramid(np.zeros((1, 4, 7, 5)), store_for(), "frame")
    assert [lv.shape[2:] for lv in levels] == [(7, 5), (4, 3), (2, 2)]


def test_modulation_gate_is_half_with_zero_weights():
    store = store_for().zero("easm.align.l1.emb")
    mv = np.random.default_rng(2).standard_normal((2, 4, 3, 3))
    np.testing.assert_allclose(E.modulate(mv, np.zeros_like(mv), store, 1), 0.5 * mv, atol=1e-7)
    assert not E.modulate(np.zeros_like(mv), np.ones_like(mv), store, 1).any()
    with pytest.raises(ContractError):
        E.modulate(mv, np.zeros((2, 4, 3, 2)), store, 1)


def test_modulation_block_oracle():
    store = store_for()
    r = np.random.default_rng(3)
    mv, fe = r.standard_normal((1, 4, 4, 4)), r.standard_normal((1, 4, 4, 4))
    w = lambda n: (store[f"easm.align.l2.emb.{n}.weight"], store[f"easm.align.l2.emb.{n}.bias"])  # noqa: E731
    h = conv2d_ref(np.concatenate([mv, fe], axis=1), *w("conv1"), 1, 1)
    h = np.where(h >= 0, h, 0.1 * h)
    o = conv2d_ref(h, *w("conv2"), 1, 1)
    want = 1 / (1 + np.exp(-o[:, :4])) * mv + o[:, 4:]
    np.testing.assert_allclose(E.modulate(mv, fe, store, 2), want, atol=1e-4)


def test_translation_offset_shifts_a_ramp():
    # identity 3x3 kernel (centre tap) sampled one column to the right
    ramp = np.tile(np.arange(8, dtype=np.float32), (1, 1, 6, 1))
    ker = np.zeros((1, 1, 3, 3), dtype=np.float32)
    ker[0, 0, 1, 1] = 1
    off = np.zeros((1, 18, 6, 8), dtype=np.float32)
    off[:, 1::2] = 1.0
    out = deform_conv2d(ramp, off, ker)
    np.testing.assert_allclose(out[..., :-1], ramp[..., :-1] + 1, atol=1e-6)
    assert not out[..., -1].any()


def test_align_produces_one_map_per_segment():
    store = store_for()
    frames = toy_frames(8, 8)
    segs = segments_for(toy_stream(8, 8), 7)
    f, ef, _ = E.extract_initial(frames, segs, segs, store)
    p0 = E.build_pyramid(f[0:1], store, "frame")
    p1 = E.build_pyramid(f[1:2], store, "frame")
    out, states = E.align_pyramid(p0, p1, E.build_pyramid(ef, store, "event"), store, return_states=True)
    assert out.shape == (7, 4, 8, 8)
    assert [s.offset.shape for s in states] == [(7, 18, 2, 2), (7, 18, 4, 4), (7, 18, 8, 8)]


def test_zero_offsets_make_alignment_a_plain_convolution():
    store = store_for()
    for lvl in (1, 2, 3):
        store = store.zero(f"easm.align.l{lvl}.offset")
    store = store.zero("easm.align.l1.feat_fuse")
    frames = toy_frames()
    segs = np.zeros((2, 2, 6, 6))
    f, ef, _ = E.extract_initial(frames, segs, segs, store)
    p0 = E.build_pyramid(f[0:1], store, "frame")
    p1 = E.build_pyramid(f[1:2], store, "frame")
    _, states = E.align_pyramid(p0, p1, E.build_pyramid(ef, store, "event"), store, return_states=True)
    assert all(not s.offset.any() for s in states)
    pair = np.concatenate([f[0:1], f[1:2]], axis=1)
    plain = conv2d_ref(pair, store["easm.align.l1.dcn.weight"], store["easm.align.l1.dcn.bias"], 1, 1)
    # with offsets at zero the deformable layer reproduces the plain convolution
    np.testing.assert_allclose(deform_conv2d(pair, np.zeros((1, 18, 6, 6)), store["easm.align.l1.dcn.weight"],
                                             store["easm.align.l1.dcn.bias"]), plain, atol=1e-5)


def test_fusion_order_length_and_symmetry():
    store = store_for()
    r = np.random.default_rng(4)
    ff, fb = r.standard_normal((7, 4, 3, 3)), r.standard_normal((7, 4, 3, 3))
    f0, f1 = r.standard_normal((4, 3, 3)), r.standard_normal((4, 3, 3))
    seq = E.fuse_directions(ff, fb, f0, f1, store)
    assert seq.shape == (9, 4, 3, 3)
    np.testing.assert_allclose(seq[0], f0, atol=0)
    np.testing.assert_allclose(seq[-1], f1, atol=0)
    w, b = store["easm.fuse.conv.weight"], store["easm.fuse.conv.bias"]
    np.testing.assert_allclose(seq[1:-1], conv2d_ref(np.concatenate([ff, fb], 1), w, b), atol=1e-4)
    same = E.fuse_directions(ff, ff, f0, f1, store)[1:-1]
    merged = w[:, :4] + w[:, 4:]
    np.testing.assert_allclose(same, conv2d_ref(ff, merged, b), atol=1e-4)
    with pytest.raises(ContractError):
        E.fuse_directions(ff, fb[:3], f0, f1, store)


def test_recurrence_zero_weights_is_zero():
    store = store_for().zero("easm.brc")
    f_star = np.random.default_rng(5).standard_normal((5, 4, 3, 3))
    fe = np.random.default_rng(6).standard_normal((3, 4, 3, 3))
    assert not E.recurrent_compensate(f_star, fe, fe, store).any()


def test_recurrence_two_step_edge_case():
    store = store_for()
    f_star = np.random.default_rng(7).standard_normal((2, 4, 3, 3)).astype(np.float32)
    empty = np.zeros((0, 4, 3, 3))
    out = E.recurrent_compensate(f_star, empty, empty, store)
    assert out.shape == (2, 4, 3, 3) and np.all(np.isfinite(out))
    with pytest.raises(ContractError):
        E.recurrent_compensate(f_star, np.zeros((1, 4, 3, 3)), empty, store)


def test_residual_identity_with_zero_recurrence():
    store = store_for().zero("easm.brc")
    out, parts = E.easm(toy_frames(), toy_stream(), store, M=3, return_parts=True)
    assert not parts["brc"].any()
    np.testing.assert_array_equal(out, parts["f_star"])


def test_published_shape_contract():
    out = E.easm(toy_frames(8, 8), toy_stream(8, 8), store_for(64), M=7)
    assert out.shape == (9, 64, 8, 8) and out.dtype == np.float32 and np.all(np.isfinite(out))


def test_backward_branch_uses_reversed_events():
    stream = toy_stream()
    _, parts = E.easm(toy_frames(), stream, store_for(), M=3, return_parts=True)
    want = segments_for(reverse(stream), 3).segments
    np.testing.assert_array_equal(parts["segments_b"].segments, want)
    assert parts["segments_b"].direction == "backward"


def test_full_chain_matches_straight_line_reference():
    store = store_for(C=4)
    frames, stream = toy_frames(), toy_stream()
    got = E.easm(frames, stream, store, M=2)
    want = easm_ref(frames.astype(np.float64), stream.records, stream.duration, store, 2)
    assert got.shape == want.shape == (4, 4, 6, 6)
    np.testing.assert_allclose(got, want, atol=2e-4)


def test_shapes_cover_every_weight_used():
    store = store_for()
    used = set()

    class Spy(dict):
        def __getitem__(self, k):
            used.add(k)
            return dict.__getitem__(self, k)

    E.easm(toy_frames(), toy_stream(), Spy(store), M=2)
    assert used == set(store)
