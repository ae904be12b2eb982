import math

import numpy as np
import pytest

import lorita
from lorita import compress, data, metrics, nn, optim


def trained_toy(dims=(12, 10, 6), depth=2, seed=0, epochs=25):
    ds = data.synth_blobs(
        n_per_class=60, classes=dims[-1], d=dims[0], separation=8.0, seed=seed
    )
    model = lorita.build_mlp(list(dims), depth=depth, seed=seed)
    cfg = optim.TrainConfig(lr=1e-2, epochs=epochs, batch_size=32, seed=seed)
    optim.train(model, ds, cfg)
    return model, ds


class TestLsvt:
    def test_fixed_rank(self):
        model, _ = trained_toy()
        plan = compress.lsvt(model, r=3)
        assert plan.ranks == [3, 3]

    def test_fraction_uses_ceil(self):
        model, _ = trained_toy()
        # layer ranks are min(12,10)=10 and min(10,6)=6
        plan = compress.lsvt(model, fraction=0.25)
        assert plan.ranks == [math.ceil(0.25 * 10), math.ceil(0.25 * 6)]

    def test_requires_exactly_one_knob(self):
        model, _ = trained_toy()
        with pytest.raises(ValueError):
            compress.lsvt(model)
        with pytest.raises(ValueError):
            compress.lsvt(model, r=2, fraction=0.5)

    def test_rank_cap(self):
        model, _ = trained_toy()
        with pytest.raises(ValueError):
            compress.lsvt(model, r=11)  # exceeds min layer rank dimension


class TestGsvt:
    def test_keep_all_is_full_rank(self):
        model, _ = trained_toy()
        plan = compress.gsvt(model, keep_fraction=1.0)
        assert plan.ranks == [10, 6]

    def test_rank_floor_one(self):
        model, _ = trained_toy()
        plan = compress.gsvt(model, keep_fraction=1e-9)
        assert all(r >= 1 for r in plan.ranks)

    def test_global_pool_semantics(self):
        """Keeping k of the pooled normalized values reproduces a direct
        reimplementation of the pooling rule."""
        model, _ = trained_toy(seed=1)
        keep_fraction = 0.4
        plan = compress.gsvt(model, keep_fraction=keep_fraction)

        pooled = []
        for li, s in enumerate(compress.spectra(model)):
            for val in s / s[0]:
                pooled.append((li, val))
        keep = math.ceil(keep_fraction * len(pooled))
        kept = sorted(pooled, key=lambda t: -t[1])[:keep]
        expected = [max(1, sum(1 for li, _ in kept if li == i)) for i in range(2)]
        assert plan.ranks == expected

    def test_invalid_fraction(self):
        model, _ = trained_toy()
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                compress.gsvt(model, keep_fraction=bad)


class TestApplyPlan:
    def test_full_rank_preserves_function(self):
        model, ds = trained_toy(seed=2)
        cm = compress.apply_plan(model, compress.gsvt(model, 1.0))
        logits, _ = nn.forward(model, ds.features)
        out = cm.forward(ds.features)
        assert np.abs(logits - out).max() < 1e-8

    def test_pair_shapes(self):
        model, _ = trained_toy()
        plan = compress.lsvt(model, r=2)
        cm = compress.apply_plan(model, plan)
        assert [a.shape for a, b in cm.pairs] == [(10, 2), (6, 2)]
        assert [b.shape for a, b in cm.pairs] == [(2, 12), (2, 10)]

    def test_retained_params(self):
        model, _ = trained_toy()
        cm = compress.apply_plan(model, compress.lsvt(model, r=2))
        assert cm.retained_params() == 2 * (12 + 10) + 2 * (10 + 6)


class TestIsvt:
    def test_matches_exhaustive_lookahead(self):
        """Each greedy commit must equal brute-force one-step lookahead:
        drop the step quantum from whichever layer hurts probe loss least."""
        for seed in (0, 1, 2):
            model, ds = trained_toy(seed=seed)
            probe = data.subsample(ds, 120, seed=seed)

            plan = compress.isvt(
                model, probe, step_params=30, target_retained_params=100
            )
            history = plan.params["history"]

            svds = compress.layer_svds(model)
            ranks = [10, 6]
            shapes = [(10, 12), (6, 10)]
            for committed in history[:5]:
                candidates = []
                for li in range(2):
                    if ranks[li] <= 1:
                        continue
                    m, n = shapes[li]
                    drop = min(max(1, math.ceil(30 / (m + n))), ranks[li] - 1)
                    trial = list(ranks)
                    trial[li] -= drop
                    loss = compress._probe_loss(svds, trial, probe)
                    candidates.append((loss, li, trial))
                best = min(candidates, key=lambda t: (t[0], t[1]))
                assert committed["layer"] == best[1], f"seed {seed}"
                ranks = best[2]

    def test_stops_at_target(self):
        model, ds = trained_toy(seed=3)
        probe = data.subsample(ds, 60, seed=0)
        plan = compress.isvt(model, probe, step_params=20, target_retained_params=90)
        cm = compress.apply_plan(model, plan)
        assert cm.retained_params() <= 90 or all(r == 1 for r in plan.ranks)

    def test_all_layers_floor_warns(self):
        model, ds = trained_toy(seed=4)
        probe = data.subsample(ds, 40, seed=0)
        with pytest.warns(UserWarning):
            compress.isvt(model, probe, step_params=20, target_retained_params=0)


class TestFinetune:
    def test_improves_or_holds_probe_accuracy(self):
        model, ds = trained_toy(seed=5)
        cm = compress.apply_plan(model, compress.lsvt(model, r=2))
        before = metrics.evaluate(cm, ds)
        cfg = optim.TrainConfig(lr=1e-3, epochs=10, batch_size=32, seed=0)
        compress.finetune(cm, ds, cfg)
        after = metrics.evaluate(cm, ds)
        assert after >= before - 0.02

    def test_ranks_unchanged(self):
        model, ds = trained_toy(seed=6)
        cm = compress.apply_plan(model, compress.lsvt(model, r=3))
        compress.finetune(cm, ds, optim.TrainConfig(lr=1e-3, epochs=2, seed=0))
        assert [a.shape[1] for a, _ in cm.pairs] == [3, 3]


class TestRetainedSvFraction:
    def test_full_plan_is_one(self):
        model, _ = trained_toy()
        plan = compress.gsvt(model, 1.0)
        assert abs(compress.retained_sv_fraction(plan, model) - 1.0) < 1e-12
