import csv
import datetime as dt

import numpy as np
import pytest

from gatedpricer import synthesis, training
from gatedpricer.gated_net import MultiModel, MultiModelParams, SingleModel, SingleModelParams
from gatedpricer.market_data import CallRecord
from gatedpricer.training import AdamState, LossConfig, ModelSpec, TrainConfig, TrainingBatch


class FixedOutput:
    """A stand-in model returning preset predictions; its gradient is the upstream vector."""

    def __init__(self, pred):
        self.pred = np.asarray(pred, float)

    def evaluate(self, m, tau):
        return self.pred, np.zeros_like(self.pred), None

    def grads_from_cache(self, cache, upstream=0.0, upstream_dm=0.0):
        return np.asarray(upstream, float)


def batch_of(y, virtual=None):
    y = np.asarray(y, float)
    v = np.zeros(len(y), bool) if virtual is None else np.asarray(virtual)
    return TrainingBatch(np.ones_like(y), np.full_like(y, 0.1), y, np.ones_like(y), v)


def scalar_params(x):
    z = np.zeros(1)
    return SingleModelParams(np.array([x], float), z, z, z, z)


class TestLoss:
    def test_single_record_arithmetic(self):
        value, _ = training.loss(batch_of([1.0]), FixedOutput([1.1]), LossConfig())
        assert value == pytest.approx(0.11)

    def test_perfect_fit_has_zero_loss_and_gradient(self, single_params, rng):
        model = SingleModel(single_params)
        m, tau = rng.uniform(0.5, 1.5, 20), rng.uniform(0.02, 1, 20)
        batch = TrainingBatch(m, tau, model(m, tau), np.ones(20), np.zeros(20, bool))
        value, grads = training.loss(batch, model, LossConfig())
        assert value == 0.0
        assert all(np.all(g == 0) for g in grads.arrays().values())

    def test_mape_skips_zero_targets(self):
        value, _ = training.loss(batch_of([0.0, 1.0]), FixedOutput([0.1, 1.0]), LossConfig(mse_weight=0, mape_weight=1))
        assert value == 0.0

    def test_virtuals_can_leave_the_mape_term(self):
        b = batch_of([1.0, 1.0], virtual=[False, True])
        with_v, _ = training.loss(b, FixedOutput([1.0, 1.5]), LossConfig(mse_weight=0))
        without_v, _ = training.loss(b, FixedOutput([1.0, 1.5]), LossConfig(mse_weight=0, mape_on_virtuals=False))
        assert with_v == pytest.approx(0.25) and without_v == 0.0

    def test_all_zero_targets_need_mse(self):
        with pytest.raises(ValueError, match="all zero"):
            training.loss(batch_of([0.0, 0.0]), FixedOutput([0.1, 0.1]), LossConfig(mse_weight=0))

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            training.loss(batch_of([]), FixedOutput([]), LossConfig())

    def test_gradient_matches_finite_differences(self, multi_params, rng):
        m, tau = rng.uniform(0.5, 1.5, 10), rng.uniform(0.02, 1, 10)
        batch = TrainingBatch(m, tau, rng.uniform(0.01, 0.5, 10), np.ones(10), np.zeros(10, bool))
        cfg = LossConfig()
        _, grads = training.loss(batch, MultiModel(multi_params), cfg)
        h = 1e-6
        for name in ("w_tilde", "W_ddot"):
            arr = multi_params.arrays()[name]
            for idx in [(0, 0), (1, 1)]:
                up, dn = arr.copy(), arr.copy()
                up[idx] += h
                dn[idx] -= h
                fd = (training.loss(batch, MultiModel(multi_params.replace(**{name: up})), cfg)[0]
                      - training.loss(batch, MultiModel(multi_params.replace(**{name: dn})), cfg)[0]) / (2 * h)
                assert getattr(grads, name)[idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(mse_weight=0, mape_weight=0)
        with pytest.raises(ValueError):
            LossConfig(hint_weight=-1)

    def test_decreases_under_adam(self, rng):
        bs = synthesis.LevyModelParams("bs", sigma=0.2)
        recs = synthesis.generate_synthetic_market(synthesis.SyntheticSurfaceSpec(bs, n_dates=1, strikes_per_date=50), seed=3)
        cfg = TrainConfig(learning_rate=0.01, epochs=200, use_virtuals=False)
        ckpt = training.train(recs, [], [], ModelSpec("single"), cfg, seed=0)
        trace = np.convolve(ckpt.metadata["loss_trace"], np.ones(20) / 20, mode="valid")
        assert trace[-1] < 0.5 * trace[0]
        assert np.mean(np.diff(trace) <= 0) > 0.9


class TestHintPenalty:
    grid_m = np.linspace(0.3, 3.0, 50)
    grid_tau = np.full(50, 0.1)

    def test_one_expert_has_no_penalty(self, single_params, rng):
        p = MultiModelParams.from_experts([single_params], rng.normal(size=(2, 3)), rng.normal(size=3), rng.normal(size=(3, 1)), np.zeros(1))
        value, _ = training.hint_penalty(MultiModel(p), self.grid_m, self.grid_tau, 0.001)
        assert value == 0.0

    def test_identical_experts_have_no_penalty(self, single_params, rng):
        p = MultiModelParams.from_experts([single_params] * 5, rng.normal(size=(2, 3)), rng.normal(size=3), rng.normal(size=(3, 5)), rng.normal(size=5))
        value, _ = training.hint_penalty(MultiModel(p), self.grid_m, self.grid_tau, 0.001)
        assert value < 1e-15

    def test_non_negative_at_initialization(self, rng):
        p = MultiModelParams.initialize(9, 5, 5, rng)
        value, _ = training.hint_penalty(MultiModel(p), self.grid_m, self.grid_tau, 0.001)
        assert value >= 0

    def test_equals_hinge_sum(self, rng):
        model = MultiModel(MultiModelParams.initialize(9, 5, 5, rng))
        g0, g1 = model.dm(self.grid_m, self.grid_tau), model.dm(self.grid_m + 0.001, self.grid_tau)
        value, _ = training.hint_penalty(model, self.grid_m, self.grid_tau, 0.001)
        assert value == pytest.approx(np.sum(np.maximum(0, g0 - g1)), rel=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        p = MultiModelParams.initialize(4, 3, 3, rng)
        m, tau = np.linspace(0.5, 1.5, 30), np.full(30, 0.05)
        _, grads = training.hint_penalty(MultiModel(p), m, tau, 0.01)
        h = 1e-7
        for name, idx in [("b_tilde", (0, 1)), ("W_dot", (0, 2)), ("W_ddot", (1, 0))]:
            arr = p.arrays()[name]
            up, dn = arr.copy(), arr.copy()
            up[idx] += h
            dn[idx] -= h
            fd = (training.hint_penalty(MultiModel(p.replace(**{name: up})), m, tau, 0.01)[0]
                  - training.hint_penalty(MultiModel(p.replace(**{name: dn})), m, tau, 0.01)[0]) / (2 * h)
            assert getattr(grads, name)[idx] == pytest.approx(fd, rel=1e-4, abs=1e-8)

    def test_single_model_rejected(self, single_params):
        with pytest.raises(TypeError):
            training.hint_penalty(SingleModel(single_params), self.grid_m, self.grid_tau, 0.001)


class TestAdam:
    def test_zero_gradient_is_a_fixed_point(self, single_params):
        out = training.adam_step(AdamState(0.1), single_params, single_params.zeros_like())
        assert all(np.array_equal(a, b) for a, b in zip(out.arrays().values(), single_params.arrays().values()))

    @pytest.mark.parametrize("g", [3.0, -0.02])
    def test_first_step_is_learning_rate_times_sign(self, g):
        state = AdamState(0.05)
        out = training.adam_step(state, scalar_params(1.0), scalar_params(g))
        assert out.w_tilde[0] - 1.0 == pytest.approx(-0.05 * np.sign(g), rel=1e-6)
        assert state.t == 1

    def test_minimises_a_quadratic(self):
        state, p = AdamState(0.1), scalar_params(1.0)
        for _ in range(100):
            p = training.adam_step(state, p, scalar_params(2 * p.w_tilde[0]))
        assert abs(p.w_tilde[0]) < 0.1

    def test_non_finite_gradient_names_block(self, single_params):
        g = single_params.zeros_like()
        g.b_bar[0] = np.inf
        with pytest.raises(FloatingPointError, match="b_bar"):
            training.adam_step(AdamState(), single_params, g)


class TestSchedule:
    def test_unset_values_come_from_model_schedule(self):
        for kind, (lr, final, epochs) in training.MODEL_SCHEDULES.items():
            cfg = TrainConfig().resolved(kind)
            assert (cfg.learning_rate, cfg.final_learning_rate, cfg.epochs) == (lr, final, epochs)

    def test_explicit_values_win(self):
        cfg = TrainConfig(learning_rate=0.002, epochs=10).resolved("multi")
        assert (cfg.learning_rate, cfg.final_learning_rate, cfg.epochs) == (0.002, None, 10)

    def test_geometric_decay_endpoints(self):
        cfg = TrainConfig(learning_rate=0.1, final_learning_rate=0.001, epochs=101)
        assert training.learning_rate_at(cfg, 0) == pytest.approx(0.1)
        assert training.learning_rate_at(cfg, 50) == pytest.approx(0.01)
        assert training.learning_rate_at(cfg, 100) == pytest.approx(0.001)

    def test_config_round_trip(self):
        cfg = TrainConfig(learning_rate=0.02, epochs=7, loss=LossConfig(hint_weight=3.0))
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


@pytest.fixture(scope="module")
def small_market():
    kou = synthesis.LevyModelParams("kou", r=0.02, sigma=0.1, lam=1.0, p_up=0.4, eta1=10.0, eta2=5.0)
    spec = synthesis.SyntheticSurfaceSpec(kou, n_dates=7, strikes_per_date=15, tau_days=(7, 30, 90))
    return synthesis.generate_synthetic_market(spec, seed=2)


class TestTrain:
    def test_expiry_virtuals_alone_learn_the_payoff(self):
        c5 = synthesis.make_c5_virtuals([100.0], 50, np.random.default_rng(0))
        ckpt = training.train(c5, [], [], ModelSpec("single"), TrainConfig(), seed=0)
        m = np.linspace(0, 1, 101)
        assert np.max(np.abs(ckpt.model(m, np.zeros_like(m)) - np.maximum(0, 1 - m))) < 0.02

    @pytest.mark.parametrize("kind", ["single", "multi"])
    def test_seed_gives_identical_checkpoints(self, kind, small_market):
        cfg = TrainConfig(epochs=30)
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(5)
            virtuals = training.build_virtuals(small_market, cfg, rng)
            hints = synthesis.make_hint_grid(sorted({r.tau_years for r in small_market}), 20)
            runs.append(training.train(small_market, virtuals, hints, ModelSpec(kind, I=3), cfg, seed=5).dumps())
        assert runs[0] == runs[1]

    def test_metadata(self, small_market):
        hints = synthesis.make_hint_grid([7 / 365], 10)
        ckpt = training.train(small_market, [], hints, ModelSpec("multi", I=3), TrainConfig(epochs=5), seed=1)
        meta = ckpt.metadata
        assert len(meta["loss_trace"]) == 5 and meta["n_hints"] == 10
        assert meta["c2_residual"] >= 0
        assert meta["config"]["learning_rate"] == training.MODEL_SCHEDULES["multi"][0]

    def test_minibatches(self, small_market):
        ckpt = training.train(small_market, [], [], ModelSpec("single"), TrainConfig(epochs=3, batch_size=16), seed=1)
        assert len(ckpt.metadata["loss_trace"]) == 3

    def test_divergence_reports_last_good_epoch(self, small_market, monkeypatch):
        calls = {"n": 0}
        real = training.loss

        def flaky(batch, model, cfg):
            calls["n"] += 1
            value, grads = real(batch, model, cfg)
            return (float("nan") if calls["n"] == 4 else value), grads

        monkeypatch.setattr(training, "loss", flaky)
        with pytest.raises(training.TrainingDiverged) as info:
            training.train(small_market, [], [], ModelSpec("single"), TrainConfig(epochs=10), seed=1)
        assert info.value.last_good_epoch == 2

    def test_needs_records(self):
        with pytest.raises(ValueError):
            training.train([], [], [], ModelSpec("single"), TrainConfig(), seed=0)

    def test_model_spec_validation(self):
        with pytest.raises(ValueError):
            ModelSpec("forest")


class TestVirtualBuild:
    def test_c5_per_spot_and_c6_per_maturity(self, small_market):
        cfg = TrainConfig(c5_samples=4)
        v = training.build_virtuals(small_market, cfg, np.random.default_rng(0))
        spots = {r.S for r in small_market}
        c5 = [x for x in v if x.kind == "C5_boundary"]
        c6 = [x for x in v if x.kind == "C6_upper"]
        assert len(c5) == 4 * len(spots)
        assert len(c6) == len({(r.tau_days, r.r) for r in small_market})

    def test_disabled(self, small_market):
        assert training.build_virtuals(small_market, TrainConfig(use_virtuals=False), None) == []


class TestRollingEvaluation:
    @pytest.mark.parametrize("n, expected", [(6, 1), (10, 5)])
    def test_window_count(self, n, expected):
        dates = [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(n)]
        wins = training.windows(dates)
        assert len(wins) == expected
        assert all(test not in train for train, test in wins)
        assert all(len(train) == 5 and train[-1] < test for train, test in wins)

    def test_needs_six_dates(self, small_market):
        few = [r for r in small_market if r.date < sorted({r.date for r in small_market})[5]]
        with pytest.raises(ValueError, match="distinct dates"):
            training.rolling_evaluate(few, ("bs",))

    def test_metrics_match_dumped_predictions(self, small_market, tmp_path):
        cfg = TrainConfig(epochs=20)
        results, preds = training.rolling_evaluate(small_market, ("single", "bs"), cfg=cfg, seed=0,
                                                   calib_kw={"n_starts": 1})
        assert len(results) == 4
        path = tmp_path / "preds.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "window", "split", "c", "c_hat"])
            for p in preds:
                w.writerow([p.method, p.window, p.split, repr(p.record.c), repr(p.c_hat)])
        rows = list(csv.DictReader(open(path)))
        for res in results:
            sel = [r for r in rows if r["method"] == res.method and int(r["window"]) == res.window and r["split"] == "test"]
            mse, mape = training.price_metrics([float(r["c"]) for r in sel], [float(r["c_hat"]) for r in sel])
            assert (mse, mape) == (res.test_mse, res.test_mape)
            assert len(sel) == res.n_test

    def test_no_test_day_leakage(self, small_market):
        results, preds = training.rolling_evaluate(small_market, ("bs",), seed=0, calib_kw={"n_starts": 1})
        for res in results:
            train_dates = {p.record.date for p in preds if p.window == res.window and p.split == "train"}
            assert res.test_date not in train_dates

    def test_price_metrics(self):
        assert training.price_metrics([1.0, 2.0], [1.1, 2.0]) == (pytest.approx(0.005), pytest.approx(5.0))
        assert np.isnan(training.price_metrics([], [])[0])

    def test_unknown_method(self, small_market):
        with pytest.raises(ValueError, match="unknown method"):
            training.fit_and_predict("heston", small_market, small_market, TrainConfig(), 0)


@pytest.mark.slow
class TestLearnability:
    def test_bs_market_is_learned(self):
        # sub-tick quotes dominate MAPE at this scale, so the market keeps contracts above 0.5
        bs = synthesis.LevyModelParams("bs", sigma=0.2, r=0.01)
        spec = synthesis.SyntheticSurfaceSpec(bs, n_dates=6, strikes_per_date=40, min_price=0.5, tau_days=(14, 30, 60, 90))
        results, _ = training.rolling_evaluate(synthesis.generate_synthetic_market(spec, seed=2), ("multi",), seed=0)
        (res,) = results
        assert res.test_mape < 2.0

    def test_virtuals_enforce_boundaries(self, small_market):
        cfg = TrainConfig()
        virtuals = training.build_virtuals(small_market, cfg, np.random.default_rng(0))
        model = training.train(small_market, virtuals, [], ModelSpec("single"), cfg, seed=0).model
        m = np.linspace(0, 2, 201)
        assert np.all(model(m, np.zeros_like(m)) >= np.maximum(0, 1 - m) - 0.05)
        for days, r in {(x.tau_days, x.r) for x in small_market}:
            tau = days / 365
            assert model(0.0, tau) == pytest.approx(np.exp(r * tau), rel=0.05)
