import math

import numpy as np
import pytest

from foilnet import autodiff as ad
from foilnet.data import Dataset, FlowSample, read_manifest, read_sample, write_sample
from foilnet.errors import ConfigInvalid, Diverged, OutOfRange, ShapeMismatch
from foilnet.train import (AdamState, MultiSeedResult, RunRecord, TrainConfig,
                           adam_step, lr_at, multi_seed, seed_stats, train)
from foilnet.unet import load_checkpoint


def cfg(manifest, out, **kw):
    base = dict(data=str(manifest), out_dir=str(out), channel_exponent=2,
                iterations=4, batch_size=4, seed=3, val_every=2)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_rejects_bad_values(self, tmp_path):
        good = dict(data="m", out_dir=str(tmp_path))
        with pytest.raises(ConfigInvalid):
            TrainConfig(iterations=0, **good)
        with pytest.raises(ConfigInvalid):
            TrainConfig(lr=0.0, **good)
        with pytest.raises(ConfigInvalid):
            TrainConfig(batch_size=0, **good)
        with pytest.raises(ConfigInvalid):
            TrainConfig(val_every=0, **good)


class TestSchedule:
    def test_reference_points(self, tmp_path):
        c = TrainConfig(data="m", out_dir=str(tmp_path), iterations=4000, lr=4e-4)
        assert lr_at(c, 0) == 4e-4
        assert lr_at(c, 2000) == 4e-4
        assert lr_at(c, 3999) == 4e-5

    def test_piecewise_shape(self, tmp_path):
        c = TrainConfig(data="m", out_dir=str(tmp_path), iterations=10, lr=1e-3)
        values = [lr_at(c, i) for i in range(10)]
        assert values[:6] == [1e-3] * 6          # flat through the halfway point
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert values[-1] == 1e-3 * 0.1
        assert min(values) >= 1e-4 - 1e-15

    def test_interior_ramp_value(self, tmp_path):
        c = TrainConfig(data="m", out_dir=str(tmp_path), iterations=4000, lr=4e-4)
        t = (3000 - 2000) / (3999 - 2000)
        assert lr_at(c, 3000) == pytest.approx(4e-4 * (1 - 0.9 * t), rel=1e-15)

    def test_three_iterations(self, tmp_path):
        # the halfway point itself still gets the full rate
        c = TrainConfig(data="m", out_dir=str(tmp_path), iterations=3, lr=1.0)
        assert lr_at(c, 0) == 1.0
        assert lr_at(c, 1) == 1.0
        assert lr_at(c, 2) == 0.1

    def test_out_of_range(self, tmp_path):
        c = TrainConfig(data="m", out_dir=str(tmp_path), iterations=10)
        with pytest.raises(OutOfRange):
            lr_at(c, -1)
        with pytest.raises(OutOfRange):
            lr_at(c, 10)


def adam_oracle(p0, grads, lr, betas=(0.5, 0.999), eps=1e-8):
    """Textbook Adam recurrence in its product form."""
    b1, b2 = betas
    m = np.zeros_like(p0)
    v = np.zeros_like(p0)
    p = np.array(p0, dtype=np.float64)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


class TestAdam:
    def test_first_step_closed_form(self):
        rng = np.random.default_rng(0)
        p0 = rng.normal(size=(3, 4))
        g = rng.normal(size=(3, 4))
        t = ad.Tensor(p0.copy(), requires_grad=True)
        params = [("w", t)]
        state = AdamState(params)
        adam_step(params, {"w": g}, state, lr=0.01)
        # bias correction makes step one independent of the betas
        np.testing.assert_allclose(t.data, p0 - 0.01 * g / (np.abs(g) + 1e-8),
                                   rtol=1e-9)
        assert state.step == 1

    def test_matches_recurrence(self):
        rng = np.random.default_rng(1)
        p0 = rng.normal(size=(5,))
        grads = [rng.normal(size=(5,)) for _ in range(4)]
        t = ad.Tensor(p0.copy(), requires_grad=True)
        params = [("w", t)]
        state = AdamState(params)
        for g in grads:
            adam_step(params, {"w": g}, state, lr=0.02, betas=(0.9, 0.99))
        np.testing.assert_allclose(
            t.data, adam_oracle(p0, grads, 0.02, betas=(0.9, 0.99)), rtol=1e-10)

    def test_shared_step_counter(self):
        a = ad.Tensor(np.zeros(2), requires_grad=True)
        b = ad.Tensor(np.zeros(3), requires_grad=True)
        params = [("a", a), ("b", b)]
        state = AdamState(params)
        grads = {"a": np.ones(2), "b": np.ones(3)}
        adam_step(params, grads, state, lr=0.1)
        adam_step(params, grads, state, lr=0.1)
        assert state.step == 2
        np.testing.assert_allclose(a.data, b.data[:2])

    def test_shape_mismatch(self):
        t = ad.Tensor(np.zeros((2, 2)), requires_grad=True)
        params = [("w", t)]
        with pytest.raises(ShapeMismatch):
            adam_step(params, {"w": np.zeros(3)}, AdamState(params), lr=0.1)


class TestRecord:
    def test_write_format(self, tmp_path):
        rec = RunRecord(seed=7)
        rec.rows = [(0, 0.5, None, 4e-4), (1, 0.25, 0.3, 4e-4)]
        p = tmp_path / "record.txt"
        rec.write(p)
        lines = p.read_text().splitlines()
        assert lines[0].startswith("#")
        assert lines[1] == "0 0.5 - 0.0004"
        assert lines[2] == "1 0.25 0.3 0.0004"

    def test_final_losses(self):
        rec = RunRecord(seed=0)
        rec.rows = [(0, 0.5, None, 1e-3), (1, 0.4, 0.45, 1e-3)]
        assert rec.final_train_loss == 0.4
        assert rec.final_val_loss == 0.45

    def test_no_val_raises(self):
        rec = RunRecord(seed=0)
        rec.rows = [(0, 0.5, None, 1e-3)]
        with pytest.raises(OutOfRange):
            rec.final_val_loss


class TestTraining:
    def test_artifacts_and_cadence(self, small_dataset, tmp_path):
        c = cfg(small_dataset, tmp_path / "run", iterations=6, val_every=2)
        rec = train(c)
        assert len(rec.rows) == 6
        assert [r[0] for r in rec.rows] == list(range(6))
        has_val = [r[2] is not None for r in rec.rows]
        assert has_val == [False, True, False, True, False, True]
        assert (tmp_path / "run" / "final.ckpt").is_file()
        assert (tmp_path / "run" / "best.ckpt").is_file()
        assert (tmp_path / "run" / "record.txt").is_file()
        assert rec.final_checkpoint.endswith("final.ckpt")
        assert all(math.isfinite(r[1]) for r in rec.rows)
        assert [r[3] for r in rec.rows] == [lr_at(c, i) for i in range(6)]

    def test_loss_recorded_before_update(self, small_dataset, tmp_path):
        gentle = train(cfg(small_dataset, tmp_path / "a", iterations=1, lr=1e-9))
        harsh = train(cfg(small_dataset, tmp_path / "b", iterations=1, lr=0.5))
        assert gentle.rows[0][1] == harsh.rows[0][1]

    def test_deterministic(self, small_dataset, tmp_path):
        r1 = train(cfg(small_dataset, tmp_path / "r1", iterations=4))
        r2 = train(cfg(small_dataset, tmp_path / "r2", iterations=4))
        assert r1.rows == r2.rows
        assert (tmp_path / "r1" / "final.ckpt").read_bytes() == \
            (tmp_path / "r2" / "final.ckpt").read_bytes()

    def test_seed_changes_run(self, small_dataset, tmp_path):
        r1 = train(cfg(small_dataset, tmp_path / "s1", iterations=2, seed=1))
        r2 = train(cfg(small_dataset, tmp_path / "s2", iterations=2, seed=2))
        assert r1.rows[0][1] != r2.rows[0][1]

    def test_best_checkpoint_meta(self, small_dataset, tmp_path):
        rec = train(cfg(small_dataset, tmp_path / "run", iterations=6, val_every=2))
        _, meta = load_checkpoint(tmp_path / "run" / "best.ckpt")
        vals = [r[2] for r in rec.rows if r[2] is not None]
        assert float(meta["val_loss"]) == pytest.approx(min(vals), rel=1e-6)
        assert "iteration" in meta

    def test_final_checkpoint_meta(self, small_dataset, tmp_path):
        train(cfg(small_dataset, tmp_path / "run", iterations=2, seed=9))
        _, meta = load_checkpoint(tmp_path / "run" / "final.ckpt")
        ds = Dataset(small_dataset)
        assert meta["seed"] == "9"
        assert meta["variant"] == "C"
        for i, name in enumerate(("mask", "in_vx", "in_vy",
                                  "pressure", "vel_x", "vel_y")):
            assert float(meta[f"norm_{name}"]) == ds.norms[i]

    def test_batch_larger_than_split(self, small_dataset, tmp_path):
        rec = train(cfg(small_dataset, tmp_path / "run", iterations=3,
                        batch_size=64))
        assert len(rec.rows) == 3

    def test_loss_decreases_overall(self, small_dataset, tmp_path):
        rec = train(cfg(small_dataset, tmp_path / "run", iterations=40,
                        val_every=40, lr=2e-3))
        first = np.mean([r[1] for r in rec.rows[:5]])
        last = np.mean([r[1] for r in rec.rows[-5:]])
        assert last < first

    def test_diverged(self, small_dataset, tmp_path):
        poisoned_root = tmp_path / "bad_ds"
        poisoned_root.mkdir()
        src_root = small_dataset.parent
        manifest = read_manifest(small_dataset)
        (poisoned_root / "samples").mkdir()
        for e in manifest.entries:
            (poisoned_root / e.path).write_bytes((src_root / e.path).read_bytes())
        (poisoned_root / "manifest.txt").write_text(small_dataset.read_text())
        victim = next(e for e in manifest.entries if e.split == "train")
        s = read_sample(poisoned_root / victim.path, manifest.variant)
        bad = np.array(s.target)
        bad[0, 0, 0] = np.nan
        write_sample(poisoned_root / victim.path,
                     FlowSample(input=s.input, target=bad, freestream=s.freestream,
                                shape_name=victim.shape_name, variant=s.variant))
        with pytest.raises(Diverged):
            # batch of everything so the poisoned sample is in iteration one
            train(cfg(poisoned_root / "manifest.txt", tmp_path / "run",
                      iterations=5, batch_size=64))
        text = (tmp_path / "run" / "record.txt").read_text().splitlines()
        assert text[-1] == "# diverged"
        assert "nan" in text[1]

    def test_no_train_split(self, small_dataset, tmp_path):
        text = small_dataset.read_text()
        text = text.replace(" train ", " test ").replace(" val ", " test ")
        bad = tmp_path / "manifest.txt"
        bad.write_text(text)
        for e in read_manifest(small_dataset).entries:
            dst = tmp_path / e.path
            dst.parent.mkdir(exist_ok=True)
            dst.write_bytes((small_dataset.parent / e.path).read_bytes())
        with pytest.raises(ConfigInvalid):
            train(cfg(bad, tmp_path / "run", iterations=1))


class TestMultiSeed:
    def test_seed_stats(self):
        mean, sem = seed_stats([1.0, 2.0, 3.0])
        assert mean == 2.0
        assert sem == pytest.approx(1.0 / math.sqrt(3.0), rel=1e-12)
        with pytest.raises(ConfigInvalid):
            seed_stats([1.0])

    def test_two_runs(self, small_dataset, tmp_path):
        c = cfg(small_dataset, tmp_path / "ms", iterations=2, seed=5)
        result = multi_seed(c, n_runs=2)
        assert isinstance(result, MultiSeedResult)
        assert [r.seed for r in result.records] == [5, 6]
        assert len(result.finals) == 2
        mean, sem = seed_stats(result.finals)
        assert result.mean == mean and result.sem == sem
        for k in (5, 6):
            assert (tmp_path / "ms" / f"seed{k}" / "final.ckpt").is_file()

    def test_uses_val_loss(self, small_dataset, tmp_path):
        c = cfg(small_dataset, tmp_path / "ms", iterations=2, seed=1, val_every=1)
        result = multi_seed(c, n_runs=2)
        for rec, final in zip(result.records, result.finals):
            assert final == rec.final_val_loss

    def test_needs_two_runs(self, small_dataset, tmp_path):
        with pytest.raises(ConfigInvalid):
            multi_seed(cfg(small_dataset, tmp_path / "x"), n_runs=1)
