import numpy as np
import pytest

import lorita
from lorita import compress, data, metrics, optim


def trained_toy(seed=0):
    ds = data.synth_blobs(n_per_class=60, classes=4, d=8, separation=8.0, seed=seed)
    model = lorita.build_mlp([8, 10, 4], depth=2, seed=seed)
    optim.train(model, ds, optim.TrainConfig(lr=1e-2, epochs=20, batch_size=32, seed=seed))
    return model, ds


class TestLayerCounting:
    def test_dense(self):
        layer = metrics.dense(7, 3)
        assert layer.params() == 21
        assert layer.flops() == 21

    def test_lowrank_dense(self):
        layer = metrics.lowrank_dense(7, 3, 2)
        assert layer.params() == 2 * (7 + 3)
        assert layer.flops() == 2 * (7 + 3)

    def test_conv(self):
        layer = metrics.conv(3, 3, 16, 32, 10, 10)
        assert layer.params() == 3 * 3 * 16 * 32
        assert layer.flops() == 3 * 3 * 16 * 32 * 10 * 10

    def test_lowrank_conv(self):
        layer = metrics.lowrank_conv(3, 3, 16, 32, 10, 10, 5)
        assert layer.params() == (3 * 3 * 16 * 5) + 32 * 5
        assert layer.flops() == ((3 * 3 * 16 * 5) + 32 * 5) * 10 * 10

    def test_batchnorm(self):
        layer = metrics.batchnorm(64)
        assert layer.params() == 128
        assert layer.flops() == 0


class TestNamedArchs:
    def test_resnet20_counts(self):
        arch = metrics.resnet20_arch()
        params = metrics.count_params(arch)
        flops = metrics.count_flops(arch)
        assert abs(params - 270_000) / 270_000 < 0.03
        assert abs(flops - 40_810_000) / 40_810_000 < 0.10

    def test_vgg16_counts(self):
        arch = metrics.vgg16_cifar_arch()
        params = metrics.count_params(arch)
        flops = metrics.count_flops(arch)
        assert abs(params - 14_730_000) / 14_730_000 < 0.03
        assert abs(flops - 314_590_000) / 314_590_000 < 0.10

    def test_mlp_arch_matches_manual_count(self):
        model = lorita.build_mlp([8, 10, 4], depth=3, seed=0)
        arch = metrics.mlp_arch(model)
        # collapsed layer sizes, independent of factor depth
        assert metrics.count_params(arch) == 8 * 10 + 10 * 4


class TestEvaluate:
    def test_perfect_model(self):
        model, ds = trained_toy()
        acc = metrics.evaluate(model, ds)
        assert 0.9 <= acc <= 1.0

    def test_compressed_model_supported(self):
        model, ds = trained_toy(seed=1)
        cm = compress.apply_plan(model, compress.gsvt(model, 1.0))
        assert abs(metrics.evaluate(cm, ds) - metrics.evaluate(model, ds)) < 1e-12


class TestSweepCurve:
    def test_single_full_fraction_zero_drop(self):
        model, ds = trained_toy(seed=2)
        points = metrics.sweep_curve(model, ds, "gsvt", [1.0])
        assert len(points) == 1
        assert points[0].accuracy_drop == 0.0

    def test_monotone_fractions_required(self):
        model, ds = trained_toy(seed=2)
        with pytest.raises(ValueError):
            metrics.sweep_curve(model, ds, "gsvt", [0.3, 0.2])
        with pytest.raises(ValueError):
            metrics.sweep_curve(model, ds, "gsvt", [0.0, 0.5])

    def test_matches_manual_compression(self):
        model, ds = trained_toy(seed=3)
        points = metrics.sweep_curve(model, ds, "gsvt", [0.4, 1.0])
        cm = compress.apply_plan(model, compress.gsvt(model, 0.4))
        assert abs(points[0].test_accuracy - metrics.evaluate(cm, ds)) < 1e-12
        assert points[0].retained_params == cm.retained_params()


class TestSpectrumReport:
    def test_rows_ordered_and_normalized(self):
        model, _ = trained_toy(seed=4)
        rows = metrics.spectrum_report(model)
        # ranks: min(8,10)=8 and min(10,4)=4
        assert len(rows) == 8 + 4
        assert (rows[0].layer, rows[0].index, rows[0].s_normalized) == (0, 0, 1.0)
        by_layer = {}
        for r in rows:
            by_layer.setdefault(r.layer, []).append(r.s_normalized)
        for vals in by_layer.values():
            assert vals[0] == 1.0
            assert all(a >= b for a, b in zip(vals, vals[1:]))
