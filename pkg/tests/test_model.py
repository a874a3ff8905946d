import numpy as np
import pytest

from cvdrppg import tensor as T
from cvdrppg.model import CVDModel, LossWeights, ModelConfig, forward_cvd
from cvdrppg.tensor import ShapeError

TINY = ModelConfig(input_h=16, input_w=16, enc_channels=(4, 8), est_channels=(8,), clip_seconds=2.0,
                   hr_init=85.0)


def _batch(rng, b=2, cfg=TINY):
    shape = (b, cfg.in_channels, cfg.input_h, cfg.input_w)
    t = np.arange(cfg.rppg_len) / cfg.rppg_fs
    hr1, hr2 = rng.uniform(50, 120, b), rng.uniform(50, 120, b)
    s1 = np.sin(2 * np.pi * hr1[:, None] / 60 * t)
    s2 = np.sin(2 * np.pi * hr2[:, None] / 60 * t)
    return T.Tensor(rng.uniform(0, 1, shape)), T.Tensor(rng.uniform(0, 1, shape)), hr1, hr2, s1, s2


def test_shapes():
    model = CVDModel(TINY, seed=0)
    m = T.Tensor(np.random.default_rng(0).uniform(size=(3, 6, 16, 16)))
    f_p, f_n = model.encode(m)
    assert TINY.feature_shape() == (8, 4, 4)
    assert f_p.shape == f_n.shape == (3, 8, 4, 4)
    assert model.decode(f_p, f_n).shape == m.shape
    hr, s = model.estimate(f_p)
    assert hr.shape == (3,) and s.shape == (3, TINY.rppg_len)


@pytest.mark.parametrize("h,w", [(64, 64), (63, 300), (17, 33)])
def test_decoder_inverts_encoder_geometry(h, w):
    cfg = ModelConfig(input_h=h, input_w=w, enc_channels=(2, 2, 2), est_channels=(2,))
    model = CVDModel(cfg)
    m = T.Tensor(np.zeros((1, 6, h, w)))
    assert model.decode(*model.encode(m)).shape == m.shape


def test_shape_errors():
    model = CVDModel(TINY)
    with pytest.raises(ShapeError, match="enc_p"):
        model.encode(T.Tensor(np.zeros((1, 6, 15, 16))))
    f = T.Tensor(np.zeros((1, 8, 4, 4)))
    with pytest.raises(ShapeError, match="decoder"):
        model.decode(f, T.Tensor(np.zeros((2, 8, 4, 4))))
    with pytest.raises(ShapeError, match="estimator"):
        model.estimate(T.Tensor(np.zeros((1, 8, 4, 3))))


def test_init_determinism():
    a, b, c = CVDModel(TINY, seed=3), CVDModel(TINY, seed=3), CVDModel(TINY, seed=4)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert not all(np.array_equal(sa[k], sc[k]) for k in sa)


def test_parameter_names_unique_and_prefixed():
    model = CVDModel(TINY)
    names = list(model.parameters())
    assert len(names) == len(set(names))
    assert {n.split(".")[0] for n in names} == {"enc_p", "enc_n", "dec", "est"}
    assert len({id(p) for p in model.parameters().values()}) == len(names)


def test_state_dict_round_trip_and_mismatch():
    src, dst = CVDModel(TINY, seed=1), CVDModel(TINY, seed=2)
    src.buffers()["enc_p.bn0"].mean += 0.5
    dst.load_state_dict(src.state_dict())
    for k, v in src.state_dict().items():
        assert np.array_equal(v, dst.state_dict()[k])
    bad = src.state_dict()
    bad.pop("est.hr.b")
    with pytest.raises(ShapeError, match="missing"):
        dst.load_state_dict(bad)
    bad = src.state_dict()
    bad["est.hr.b"] = np.zeros(2)
    with pytest.raises(ShapeError, match="est.hr.b"):
        dst.load_state_dict(bad)


def test_hr_head_starts_at_hr_init():
    # the HR head's bias carries the init value; the FC weights start small
    model = CVDModel(TINY)
    assert model.est.hr_b.data[0] == TINY.hr_init


def test_estimator_is_shared_between_real_and_pseudo(rng):
    """Pseudo-feature HRs come from the very same estimator weights as the real ones."""
    model = CVDModel(TINY, seed=0)
    m1, m2, hr1, hr2, s1, s2 = _batch(rng)
    out = forward_cvd(model, m1, m2, hr1, hr2, s1, s2, train=False)
    for key, src in (("pse1", "f_pse_p1"), ("pse2", "f_pse_p2"), ("1", "f_p1")):
        hr, s = model.estimate(out.features[src], train=False)
        np.testing.assert_allclose(out.hr[key].data, hr.data, rtol=0, atol=1e-12)
        np.testing.assert_allclose(out.s_pre[key].data, s.data, rtol=0, atol=1e-12)


def test_pseudo_maps_are_swapped_decodes(rng):
    model = CVDModel(TINY, seed=0)
    m1, m2, *labels = _batch(rng)
    out = forward_cvd(model, m1, m2, *labels, train=False)
    f = out.features
    np.testing.assert_allclose(out.m_pse1.data, model.decode(f["f_p1"], f["f_n2"]).data, atol=1e-12)
    np.testing.assert_allclose(out.m_pse2.data, model.decode(f["f_p2"], f["f_n1"]).data, atol=1e-12)
    np.testing.assert_allclose(out.m1_rec.data, model.decode(f["f_p1"], f["f_n1"]).data, atol=1e-12)


def test_total_is_sum_of_terms(rng):
    model = CVDModel(TINY)
    out = forward_cvd(model, *_batch(rng))
    t = out.terms()
    assert t["L"] == pytest.approx(t["L_rec"] + t["L_CVD"] + t["L_pre"], rel=1e-12)
    assert min(t.values()) >= 0


def test_without_cvd_no_pseudo_branch(rng):
    model = CVDModel(TINY)
    out = forward_cvd(model, *_batch(rng), use_cvd=False)
    assert out.l_cvd is None and out.m_pse1 is None and set(out.hr) == {"1", "2"}
    assert out.terms()["L_CVD"] == 0.0
    assert out.total.item() == pytest.approx(out.l_rec.item() + out.l_pre.item(), rel=1e-12)


def test_pair_swap_symmetry(rng):
    model = CVDModel(TINY)
    m1, m2, hr1, hr2, s1, s2 = _batch(rng)
    a = forward_cvd(model, m1, m2, hr1, hr2, s1, s2)
    b = forward_cvd(model, m2, m1, hr2, hr1, s2, s1)
    for k in ("L_rec", "L_CVD", "L_pre", "L"):
        assert a.terms()[k] == pytest.approx(b.terms()[k], rel=1e-10)
    np.testing.assert_allclose(a.hr["pse1"].data, b.hr["pse2"].data, rtol=1e-10)


def test_hr_stopgrad_changes_gradient_not_value(rng):
    batch = _batch(rng)
    vals, grads = [], []
    for flag in (True, False):
        model = CVDModel(TINY, seed=0)
        out = forward_cvd(model, *batch, hr_stopgrad=flag)
        T.backward(out.total)
        vals.append(out.total.item())
        grads.append(model.est.hr_w.grad.copy())
    assert vals[0] == vals[1]
    assert not np.allclose(grads[0], grads[1])


def test_pseudo_passes_leave_running_stats_alone(rng):
    m1, m2, *labels = _batch(rng)
    with_cvd, reference = CVDModel(TINY), CVDModel(TINY)
    forward_cvd(with_cvd, m1, m2, *labels, use_cvd=True)
    f_p, _ = reference.encode(T.concat([m1, m2], axis=0))
    reference.estimate(f_p)
    for k, rs in with_cvd.buffers().items():
        ref = reference.buffers()[k]
        np.testing.assert_array_equal(rs.mean, ref.mean)
        np.testing.assert_array_equal(rs.var, ref.var)


def test_eval_mode_does_not_touch_running_stats(rng):
    model = CVDModel(TINY)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    forward_cvd(model, *_batch(rng), train=False)
    assert all(np.array_equal(before[k], v) for k, v in model.state_dict().items())


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(rec=-1.0)


def _rel(a, b):
    return abs(a - b) / max(abs(a) + abs(b), 1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_end_to_end_gradient_matches_finite_differences(seed):
    """Whole-model gradient through encoders, decoder, re-encoding and both heads."""
    rng = np.random.default_rng(seed)
    batch = _batch(rng)
    model = CVDModel(TINY, seed=seed)

    def loss():
        return forward_cvd(model, *batch, hr_stopgrad=False).total

    model.zero_grad()
    T.backward(loss())
    params = model.parameters()
    names = sorted(params)
    checked = 0
    for name in rng.choice(names, size=12, replace=False):
        p = params[name]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = p.grad[idx]
        h = 1e-6  # wider steps straddle the L1 kinks of the pair losses
        orig = p.data[idx]
        p.data[idx] = orig + h
        up = loss().item()
        p.data[idx] = orig - h
        down = loss().item()
        p.data[idx] = orig
        numeric = (up - down) / (2 * h)
        if abs(analytic) + abs(numeric) < 1e-5:
            continue
        assert _rel(analytic, numeric) < 1e-4, (name, idx, analytic, numeric)
        checked += 1
    assert checked >= 6


def test_small_gradient_step_descends():
    """A short step against the gradient lowers the pair loss for most random draws."""
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        batch = _batch(rng)
        model = CVDModel(TINY, seed=seed)
        out = forward_cvd(model, *batch, hr_stopgrad=False)
        T.backward(out.total)
        params = list(model.parameters().values())
        norm = np.sqrt(sum(float((p.grad ** 2).sum()) for p in params))
        for p in params:
            p.data -= 1e-4 * p.grad / norm
        wins += forward_cvd(model, *batch, hr_stopgrad=False).total.item() < out.total.item()
    assert wins >= 19
