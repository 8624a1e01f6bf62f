import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import average_precision_score

from bernoulli_ad.anomaly import InferenceConfig
from bernoulli_ad.codec import BitplaneCodec
from bernoulli_ad.datagen import PhantomSpec, generate_anomalous, generate_healthy
from bernoulli_ad.denoiser import Architecture, ConvDenoiser
from bernoulli_ad.eval import (AGGREGATE_FIELDS, ROW_FIELDS, UndefinedMetricError, aggregate,
                               auprc, best_cell, dice, evaluate, grid_search, psnr, rows_to_csv)
from bernoulli_ad.rng import RngStream
from bernoulli_ad.schedule import build_schedule
from oracles import auprc_sweep

bool_maps = arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12)))


class TestDice:
    def test_identical(self):
        m = np.zeros((5, 5), bool)
        m[1:3, 1:4] = True
        assert dice(m, m) == 1

    def test_disjoint(self):
        a = np.zeros((4, 4), bool)
        b = a.copy()
        a[0, 0] = b[3, 3] = True
        assert dice(a, b) == 0

    def test_hand_count(self):
        pred = np.zeros(100, bool)
        truth = np.zeros(100, bool)
        pred[:30] = True
        truth[10:60] = True
        assert dice(pred, truth) == pytest.approx(0.5)

    def test_both_empty(self):
        assert dice(np.zeros((3, 3)), np.zeros((3, 3))) == 1

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice(np.zeros((3, 3)), np.zeros((3, 4)))

    @given(bool_maps, st.integers(0, 2**31))
    def test_symmetric_and_bounded(self, a, seed):
        b = RngStream(seed).random(a.shape) < 0.5
        assert dice(a, b) == dice(b, a)
        assert 0 <= dice(a, b) <= 1


class TestAuprc:
    def test_perfect_separation(self):
        assert auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1

    def test_hand_example(self):
        v = auprc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0])
        assert v == pytest.approx(0.5 + 2 / 3 * 0.5, abs=1e-12)
        assert v == pytest.approx(auprc_sweep([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]), abs=1e-12)

    def test_constant_scores_give_positive_rate(self):
        truth = np.zeros((10, 10), bool)
        truth[:3, :5] = True
        assert auprc(np.full((10, 10), 0.4), truth) == pytest.approx(0.15, abs=1e-12)
        assert auprc_sweep(np.full(100, 0.4), truth) == pytest.approx(0.15, abs=1e-12)

    def test_all_negative_raises(self):
        with pytest.raises(UndefinedMetricError):
            auprc([0.1, 0.2], [0, 0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            auprc(np.zeros(4), np.ones(5))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 1000), st.integers(1, 6), st.integers(0, 2**31))
    def test_matches_sweep_oracle(self, n, levels, seed):
        g = RngStream(seed)
        scores = np.floor(g.random(n) * levels * 3) / 3   # heavy ties
        truth = g.random(n) < 0.3
        truth[0] = True
        assert abs(auprc(scores, truth) - auprc_sweep(scores, truth)) <= 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 500), st.integers(0, 2**31))
    def test_agrees_with_average_precision(self, n, seed):
        g = RngStream(seed)
        scores = g.random(n)
        truth = g.random(n) < 0.2
        truth[-1] = True
        assert auprc(scores, truth) == pytest.approx(average_precision_score(truth, scores),
                                                     abs=1e-9)


class TestPsnr:
    def test_known_mse(self):
        x = np.zeros((1, 10, 10))
        assert psnr(x, x + 0.1) == pytest.approx(20.0)
        assert psnr(x, x + 0.05) == pytest.approx(10 * math.log10(400))
        assert psnr(x, x + 0.05) == pytest.approx(26.02, abs=5e-3)

    def test_cap(self):
        x = RngStream(0).random((8, 8))
        assert psnr(x, x) == 99.0
        assert psnr(x, x + 1e-6) == 99.0

    def test_monotone_in_noise(self):
        x = RngStream(1).random((32, 32)) * 0.5
        u = RngStream(2).random((32, 32)) - 0.5
        vals = [psnr(x, x + amp * u) for amp in (0.01, 0.02, 0.05, 0.1, 0.3)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))


@pytest.fixture(scope="module")
def small_setup():
    spec = PhantomSpec(size=32, blob_radius=(3.0, 4.0))
    X, M = generate_anomalous(spec, 3, seed=5, split="eval")
    H = generate_healthy(spec, 2, seed=6)
    codec = BitplaneCodec(bits=4, factor=4).fit(H)
    den = ConvDenoiser(Architecture(channels=4, width=4, n_blocks=1, emb_dim=8), seed=1,
                       zero_output=False)
    return {"anomalous": X, "masks": M, "healthy": H}, codec, den, build_schedule("linear", 100)


class TestGrid:
    def test_single_cell_equals_evaluate(self, small_setup):
        data, codec, den, sched = small_setup
        cells, rows = grid_search(data, codec, den, sched, [0.5], [10], seed=3)
        cfg = InferenceConfig(L=10, P=0.5, seed=3)
        direct = evaluate(data["anomalous"], data["masks"], codec, den, sched, cfg)
        direct += evaluate(data["healthy"], None, codec, den, sched, cfg, "healthy")
        assert len(cells) == 1
        assert rows_to_csv(cells, AGGREGATE_FIELDS) == \
            rows_to_csv([aggregate(direct, 0.5, 10)], AGGREGATE_FIELDS)
        assert rows_to_csv(rows, ROW_FIELDS) == rows_to_csv(direct, ROW_FIELDS)

    def test_cells_independent_of_grid_order(self, small_setup):
        data, codec, den, sched = small_setup
        a, _ = grid_search(data, codec, den, sched, [0.0, 0.5], [5, 10], seed=2)
        b, _ = grid_search(data, codec, den, sched, [0.5, 0.0], [10, 5], seed=2)
        key = lambda c: (c["P"], c["L"])
        assert rows_to_csv(sorted(a, key=key), AGGREGATE_FIELDS) == \
            rows_to_csv(sorted(b, key=key), AGGREGATE_FIELDS)

    def test_csv_deterministic_and_complete(self, small_setup):
        data, codec, den, sched = small_setup
        out = [rows_to_csv(grid_search(data, codec, den, sched, [0.3], [8], seed=1)[0],
                           AGGREGATE_FIELDS) for _ in range(2)]
        assert out[0] == out[1]
        header, line = out[0].strip().splitlines()
        assert header == ",".join(AGGREGATE_FIELDS)
        assert line.count(",") == len(AGGREGATE_FIELDS) - 1

    def test_row_ranges(self, small_setup):
        data, codec, den, sched = small_setup
        _, rows = grid_search(data, codec, den, sched, [0.5], [10], seed=0)
        for r in rows:
            assert 0 <= r.dice <= 1
            assert r.psnr <= 99.0
            assert 0 <= r.mask_fraction <= 100
            assert math.isnan(r.auprc) == (r.group == "healthy")

    def test_empty_grid_rejected(self, small_setup):
        data, codec, den, sched = small_setup
        with pytest.raises(ValueError):
            grid_search(data, codec, den, sched, [], [10], seed=0)

    def test_best_cell(self):
        cells = [{"P": 0.0, "L": 1, "mean_dice": 0.3}, {"P": 0.5, "L": 1, "mean_dice": 0.6}]
        assert best_cell(cells)["P"] == 0.5
