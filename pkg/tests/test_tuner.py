import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kancim.cost import TechParams, check_constraints
from kancim.data import synthetic
from kancim.errors import ConfigError
from kancim.fabric import CrossbarConfig, EncoderConfig
from kancim.spline import KanModel
from kancim.train import TrainConfig
from kancim.tuner import HIGH, LOW, MEDIUM, TuneConfig, assign_grids, profile_sensitivity, tune

from oracles import fd_sensitivity

TECH, XB, ENC = TechParams(), CrossbarConfig(), EncoderConfig()


class TestSensitivity:
    def test_matches_finite_differences_three_layers(self):
        rng = np.random.default_rng(0)
        model = KanModel.build([2, 2, 2, 1], 2, 3, -1, 1, seed=4, scale=0.5, base_act="silu")
        X = rng.uniform(-0.9, 0.9, (6, 2))
        Y = rng.normal(size=(6, 1))
        got = profile_sensitivity(model, X, Y).S
        ref = fd_sensitivity(model, X, Y)
        for g, r in zip(got, ref):
            assert abs(g - r) <= 1e-3 * r

    def test_dead_layer_zero(self):
        model = KanModel.build([2, 2, 1], 3, 5, -1, 1, seed=0)
        model.layers[1].coeffs[:] = 0
        model.layers[1].base_weights[:] = 0
        X = np.random.default_rng(1).uniform(-1, 1, (10, 2))
        S = profile_sensitivity(model, X, np.ones((10, 1))).S
        assert S[0] == 0 and S[1] > 0

    def test_identical_branches_equal(self):
        model = KanModel.build([1, 2], 3, 5, -1, 1, seed=0)
        twin = KanModel.build([1, 2], 3, 5, -1, 1, seed=0)
        X = np.linspace(-1, 1, 9)[:, None]
        Y = np.zeros((9, 2))
        a = profile_sensitivity(model, X, Y).S
        b = profile_sensitivity(twin, X, Y).S
        assert abs(a[0] - b[0]) <= 1e-10


class TestAssignGrids:
    def test_three_distinct(self):
        p = assign_grids([3, 2, 1], (20, 10, 5))
        assert p.classes == [HIGH, MEDIUM, LOW] and p.grids == [20, 10, 5]

    def test_all_equal_all_high(self):
        assert assign_grids([0.7] * 5, (20, 10, 5)).classes == [HIGH] * 5

    def test_single_layer_high(self):
        assert assign_grids([1e-9], (20, 10, 5)).classes == [HIGH]

    def test_bad_templates(self):
        with pytest.raises(ConfigError):
            assign_grids([1, 2], (5, 10, 20))

    @settings(max_examples=100, deadline=None)
    @given(S=st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=12), k=st.sampled_from([0.5, 2.0, 8.0, 1e3]))
    def test_rescaling_invariant(self, S, k):
        a = assign_grids(S, (3, 2, 1)).classes
        b = assign_grids([s * k for s in S], (3, 2, 1)).classes
        assert a == b


def run(kind, seed=0, noise=0.0, cfg=None, **kw):
    ds = synthetic(kind, 400, 2, seed=seed, noise=noise)
    model = KanModel.build([2, 1], 3, 5, -1, 1, seed=seed)
    cfg = cfg or TuneConfig(warmup_epochs=5, interval=5, increment=5, g_cap=20)
    return tune(model, ds, cfg, TrainConfig(lr=0.05, seed=seed), TECH, XB, ENC, **kw)


class TestTune:
    def test_extends_to_cap(self, tmp_path):
        res = run("uniform", trace_path=tmp_path / "t.jsonl")
        dec = [r["decision"] for r in res.trace]
        assert dec == ["start", "extend", "extend", "extend", "stop_cap"]
        assert [r["grids"][0] for r in res.trace if r["decision"] in ("start", "extend")] == [5, 10, 15, 20]
        assert res.model.grids == [20]
        lines = (tmp_path / "t.jsonl").read_text().splitlines()
        assert [json.loads(l) for l in lines] == json.loads(json.dumps(res.trace))

    def test_budget_below_next_step_blocks_extension(self):
        start = run("uniform", cfg=TuneConfig(warmup_epochs=5, max_windows=0)).trace[0]["cost"]
        cfg = TuneConfig(warmup_epochs=5, g_cap=20, budget={"energy": start["energy"]})
        res = run("uniform", cfg=cfg)
        assert [r["decision"] for r in res.trace] == ["start", "stop_budget"]
        assert res.model.grids == [5] and res.feasible

    def test_accepted_configs_respect_budget(self):
        full = run("uniform").trace
        # energy grows with G (more rows driven); area need not
        used = [r["cost"]["energy"] for r in full if r["decision"] in ("start", "extend")]
        budget = {"energy": (used[1] + used[2]) / 2}
        res = run("uniform", cfg=TuneConfig(warmup_epochs=5, g_cap=20, budget=budget))
        for r in res.trace:
            if r["decision"] in ("start", "extend"):
                assert r["cost"]["energy"] <= budget["energy"]
        assert check_constraints(res.report, budget)[0]
        assert res.model.grids == [10]

    def test_plateau_rolls_back_once(self):
        res = run("constant", noise=0.1, cfg=TuneConfig(warmup_epochs=20, g_cap=20))
        dec = [r["decision"] for r in res.trace]
        assert dec == ["start", "rollback"]
        rb = res.trace[-1]
        assert rb["rejected_grids"] == [10] and res.model.grids == rb["grids"] == [5]
        assert res.rollbacks == 1

    def test_grids_never_shrink_before_terminal_rollback(self):
        for res in (run("uniform"), run("constant", noise=0.1)):
            g = [r["grids"][0] for r in res.trace if r["decision"] != "rollback"]
            assert g == sorted(g)

    def test_infeasible(self):
        res = run("uniform", cfg=TuneConfig(warmup_epochs=2, budget={"area": 1.0}))
        assert res.status == "infeasible" and not res.feasible
        assert res.trace[-1]["decision"] == "infeasible" and res.trace[-1]["grids"] == [1]
        assert res.report.area > 1.0

    def test_templates_assign_per_class(self):
        ds = synthetic("uniform", 300, 2, seed=0)
        model = KanModel.build([2, 2, 1], 3, 5, -1, 1, seed=0)
        cfg = TuneConfig(warmup_epochs=3, templates=(12, 8, 6), max_windows=0)
        res = tune(model, ds, cfg, TrainConfig(seed=0), TECH, XB, ENC)
        assert res.model.grids == res.profile.grids
        assert set(res.model.grids) <= {12, 8, 6}

    def test_trace_byte_identical(self, tmp_path):
        run("uniform", trace_path=tmp_path / "a.jsonl")
        run("uniform", trace_path=tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_resume_reproduces_remaining_trace(self, tmp_path):
        full = run("uniform", cfg=TuneConfig(warmup_epochs=5, g_cap=20, max_windows=3),
                   trace_path=tmp_path / "full.jsonl")
        run("uniform", cfg=TuneConfig(warmup_epochs=5, g_cap=20, max_windows=1),
            checkpoint_path=tmp_path / "state.json")
        resumed = run("uniform", cfg=TuneConfig(warmup_epochs=5, g_cap=20, max_windows=3),
                      checkpoint_path=tmp_path / "state.json", resume=True,
                      trace_path=tmp_path / "resumed.jsonl")
        assert resumed.trace == full.trace
        assert (tmp_path / "resumed.jsonl").read_bytes() == (tmp_path / "full.jsonl").read_bytes()
        np.testing.assert_array_equal(resumed.model.layers[0].coeffs, full.model.layers[0].coeffs)

    def test_resume_without_checkpoint(self, tmp_path):
        with pytest.raises(ConfigError):
            run("uniform", checkpoint_path=tmp_path / "none.json", resume=True)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TuneConfig(increment=0)
        with pytest.raises(ConfigError):
            TuneConfig(budget={"power": 1})
        with pytest.raises(ConfigError):
            TuneConfig(g_cap=300)
