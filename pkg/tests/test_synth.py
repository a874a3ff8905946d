import numpy as np
import pytest
from scipy import stats

from cvdrppg.mstmap import CONSTANT_ROW_VALUE, build_mstmap
from cvdrppg.physio import estimate_hr
from cvdrppg.synth import (NOISE_PRESETS, BvpSpec, LabeledSample, NoiseSpec, balance_resample,
                           draw_labels, gen_bvp, gen_dataset, gen_mstmap, gen_video, load_dataset,
                           manifest_hash, noise_preset, save_dataset)


def test_bvp_hr_oracle():
    bvp = gen_bvp(BvpSpec(hr=72.0, fs=30.0, duration=10.0))
    assert bvp.samples.size == 300
    assert estimate_hr(bvp) == pytest.approx(72.0, abs=0.5)


def test_bvp_zero_harmonics_and_determinism():
    assert not gen_bvp(BvpSpec(hr=80.0, harmonics=(0.0, 0.0, 0.0))).samples.any()
    a = gen_bvp(BvpSpec(hr=80.0, noise_std=0.1, seed=5)).samples
    b = gen_bvp(BvpSpec(hr=80.0, noise_std=0.1, seed=5)).samples
    assert a.tobytes() == b.tobytes()


def test_bvp_spec_validation():
    with pytest.raises(ValueError, match="outside"):
        gen_bvp(BvpSpec(hr=200.0))
    with pytest.raises(ValueError, match="Nyquist"):
        gen_bvp(BvpSpec(hr=120.0, fs=10.0))   # third harmonic at 6 Hz
    with pytest.raises(ValueError):
        NoiseSpec(drift_amp=-1.0)
    with pytest.raises(ValueError):
        NoiseSpec(drift_freq=0.2)
    with pytest.raises(KeyError):
        noise_preset("extreme")


@pytest.mark.parametrize("seed", range(10))
def test_label_consistency(seed):
    rng = np.random.default_rng(seed)
    hr = rng.uniform(45, 175)
    bvp = gen_bvp(BvpSpec(hr=hr, noise_std=0.2, seed=seed))
    assert estimate_hr(bvp) == pytest.approx(hr, abs=1.0)


def test_clean_map_rows_peak_at_hr():
    bvp = gen_bvp(BvpSpec(hr=95.0, seed=2))
    s = gen_mstmap(bvp, rows=63, noise=NoiseSpec(seed=2), hr_gt=95.0)
    assert s.values.shape == (63, 300, 6)
    for r in range(63):
        assert estimate_hr(s.values[r, :, 1], 30.0) == pytest.approx(95.0, abs=1.0)


def test_zero_pulsatility_gives_constant_map():
    bvp = gen_bvp(BvpSpec(hr=70.0))
    s = gen_mstmap(bvp, rows=7, pulsatility=(0, 0, 0, 0, 0, 0))
    assert (s.values == CONSTANT_ROW_VALUE).all()


def test_rows_must_be_subset_count():
    with pytest.raises(ValueError):
        gen_mstmap(gen_bvp(BvpSpec(hr=70.0)), rows=10)


def test_corruption_monotone():
    levels = ["none", "mild", "moderate", "heavy"]
    mad = np.zeros(len(levels))
    for seed in range(8):
        bvp = gen_bvp(BvpSpec(hr=60.0 + 5 * seed, seed=seed))
        clean = gen_mstmap(bvp, 15, noise_preset("none", seed)).values
        for i, name in enumerate(levels):
            mad[i] += np.abs(gen_mstmap(bvp, 15, noise_preset(name, seed)).values - clean).mean()
    assert mad[0] == 0.0
    assert (np.diff(mad) > 0).all()


def test_video_pipeline_and_background_exclusion():
    bvp = gen_bvp(BvpSpec(hr=84.0, seed=1))
    a = build_mstmap(gen_video(bvp, seed=1))
    bg = np.random.default_rng(9).uniform(0, 255, size=(48, 64, 3))
    b = build_mstmap(gen_video(bvp, seed=1, background=bg))
    assert a.values.tobytes() == b.values.tobytes()
    assert estimate_hr(a.values[-1, :, 1], 30.0) == pytest.approx(84.0, abs=1.0)
    flat = build_mstmap(gen_video(bvp, amplitude=0.0, seed=1))
    assert (flat.values == CONSTANT_ROW_VALUE).all()


def test_dataset_labels_split_and_determinism():
    ds = gen_dataset(100, (50, 120), "mild", seed=3, rows=7)
    assert len(ds.samples) == 100
    assert all(50 <= s.hr_gt <= 120 for s in ds.samples)
    assert ds.samples[0].values.shape == (7, 300, 6)
    n_val = len(ds.split("val"))
    assert 10 <= n_val <= 30 and n_val + len(ds.split("train")) == 100
    again = gen_dataset(100, (50, 120), "mild", seed=3, rows=7)
    assert manifest_hash(ds.manifest) == manifest_hash(again.manifest)
    assert manifest_hash(ds.manifest) != manifest_hash(gen_dataset(100, (50, 120), "mild", seed=4, rows=7).manifest)
    hrs, _ = draw_labels(100, (50, 120), 3)
    assert [s.hr_gt for s in ds.samples] == hrs.tolist()


def test_hr_draw_is_uniform():
    hrs, _ = draw_labels(10_000, (50, 120), seed=11)
    counts, _ = np.histogram(hrs, bins=14, range=(50, 120))
    assert stats.chisquare(counts).pvalue > 0.001


def _fake(hr):
    return LabeledSample(np.zeros((1, 2, 6)), hr, None, NoiseSpec())


def test_balance_two_bins():
    samples = [_fake(62.0)] * 90 + [_fake(101.0)] * 10
    rng = np.random.default_rng(0)
    frac = np.mean([np.mean([s.hr_gt < 80 for s in balance_resample(samples, 5.0, rng)])
                    for _ in range(200)])
    assert frac == pytest.approx(0.5, abs=0.02)


def test_balance_never_invents_bins_and_keeps_uniform():
    samples = [_fake(hr) for hr in np.repeat([55.0, 65.0, 75.0, 85.0], 25)]
    rng = np.random.default_rng(1)
    out = [s.hr_gt for _ in range(100) for s in balance_resample(samples, 10.0, rng)]
    assert set(out) <= {55.0, 65.0, 75.0, 85.0}
    _, c = np.unique(out, return_counts=True)
    np.testing.assert_allclose(c / c.sum(), 0.25, atol=0.02)


def test_dataset_roundtrip(tmp_path):
    ds = gen_dataset(5, noise="moderate", seed=2, rows=3)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert [s.sample_id for s in back.samples] == [s.sample_id for s in ds.samples]
    for a, b in zip(ds.samples, back.samples):
        assert a.values.tobytes() == b.values.tobytes()
        assert a.bvp.samples.tobytes() == b.bvp.samples.tobytes()
        assert a.hr_gt == b.hr_gt and a.noise == b.noise
    entry = back.manifest["samples"][0]
    assert {"map_file", "hr_gt", "bvp_file", "noise"} <= set(entry)


def test_presets_are_ordered():
    keys = ("drift_amp", "spike_rate", "spike_amp", "gain_jitter", "sensor_std")
    order = ["none", "mild", "moderate", "heavy"]
    for k in keys:
        vals = [getattr(NOISE_PRESETS[n], k) for n in order]
        assert vals == sorted(vals)
