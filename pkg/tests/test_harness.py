import json

import numpy as np
import pytest

from cdac.baselines import InfomaxRunner, infomax_solve
from cdac.errors import TableMismatchError
from cdac.harness import ConfigError, EnvironmentConfig, compare_policies
from cdac.observation import PeripheralTaskModel, SimpleTaskModel
from cdac.solver import CostParams, value_iteration
from cdac.tableio import (
    PGM_BACKGROUND,
    PGM_GRAY,
    export_policy_map,
    load_tables,
    read_tables,
    save_tables,
)
from cdac.trials import AlwaysStop, CdacRunner, run_batch, run_trial
from conftest import grid, peripheral_solution, simple_solution

TASK1 = SimpleTaskModel(0.9)
TASK2 = PeripheralTaskModel((0.62, 0.6, 0.55, 0.5))
COSTS = CostParams(0.1)


class Recorder:
    """Wraps a runner and keeps every belief it was shown."""

    def __init__(self, inner):
        self.inner, self.seen = inner, []

    def act(self, beliefs, fixations, u):
        self.seen.append(beliefs.copy())
        return self.inner.act(beliefs, fixations, u)


class TestRunTrial:
    def test_always_stop_task2(self):
        rec = run_trial(AlwaysStop(TASK2), TASK2, COSTS, target=2, seed=0, initial_fixation=6)
        assert (rec.steps, rec.switches, rec.declared) == (0, 0, 0)
        assert rec.cost == 1.0 and not rec.correct

    def test_deterministic_first_observation(self, fig1):
        runner = Recorder(CdacRunner(fig1.policy))
        rec = run_trial(runner, TASK1, COSTS, target=0, seed=3, initial_fixation=0,
                        generative=SimpleTaskModel(1.0))
        assert fig1.policy.codes[grid(200).nearest(np.full(3, 1 / 3)), 0] == 3
        np.testing.assert_allclose(runner.seen[1][0], [9 / 11, 1 / 11, 1 / 11], atol=1e-15)
        assert rec.correct

    def test_same_seed_same_record(self, fig1):
        a = [run_trial(CdacRunner(fig1.policy), TASK1, COSTS, s % 3, s, 0) for s in range(20)]
        b = [run_trial(CdacRunner(fig1.policy), TASK1, COSTS, s % 3, s, 0) for s in range(20)]
        assert a == b

    def test_cap_forces_stop(self):
        sol = simple_solution(0.1, 0.0, 0.9)
        rec = run_trial(CdacRunner(sol.policy), TASK1, COSTS, 1, 0, 0, cap=0)
        assert rec.capped and not rec.correct and rec.steps == 0

    def test_batch_membership_irrelevant(self, fig1):
        batch = run_batch(CdacRunner(fig1.policy), TASK1, COSTS, 200, 5, 0)
        from cdac.trials import trial_seeds
        seeds, targets = trial_seeds(5, 200)
        for i in (0, 17, 199):
            alone = run_trial(CdacRunner(fig1.policy), TASK1, COSTS, targets[i], seeds[i], 0)
            assert alone == batch.record(i)


class TestRunBatch:
    def test_single_trial(self, fig1):
        batch = run_batch(CdacRunner(fig1.policy), TASK1, COSTS, 1, 9, 0)
        rec, stats = batch.record(0), batch.stats()
        assert stats.accuracy == float(rec.correct)
        assert stats.mean_steps == rec.steps and stats.mean_cost == rec.cost
        assert stats.se_accuracy is None and stats.se_cost is None

    def test_always_stop_accuracy(self):
        stats = run_batch(AlwaysStop(TASK1), TASK1, COSTS, 30000, 0, 0).stats()
        assert abs(stats.accuracy - 1 / 3) <= 0.01

    def test_seed_stability(self, fig1):
        a = run_batch(CdacRunner(fig1.policy), TASK1, COSTS, 5000, 1, 0).stats()
        b = run_batch(CdacRunner(fig1.policy), TASK1, COSTS, 5000, 2, 0).stats()
        for m, s in (("accuracy", "se_accuracy"), ("mean_steps", "se_steps"),
                     ("mean_cost", "se_cost")):
            se = np.hypot(getattr(a, s), getattr(b, s))
            assert abs(getattr(a, m) - getattr(b, m)) <= 3 * se

    def test_record_invariants(self):
        sol = simple_solution(0.1, 0.1, 0.9)
        costs = CostParams(0.1, 0.1)
        batch = run_batch(CdacRunner(sol.policy), TASK1, costs, 3000, 4, 0)
        for r in batch.records():
            if r.steps >= 1:
                assert r.switches <= r.steps - 1
            assert r.cost == 0.1 * r.steps + 0.1 * r.switches + (0.0 if r.correct else 1.0)
        stats = batch.stats()
        wrong = np.mean(~batch.correct & ~batch.capped)
        assert stats.accuracy + wrong + stats.capped / stats.n_trials == pytest.approx(1.0)

    def test_cdac_beats_always_stop(self, fig1):
        stats = run_batch(CdacRunner(fig1.policy), TASK1, COSTS, 10000, 0, 0).stats()
        assert stats.mean_cost + 3 * stats.se_cost <= 2 / 3

    def test_cdac_beats_infomax_with_switch_costs(self):
        costs = CostParams(0.1, 0.1)
        sol = simple_solution(0.1, 0.1, 0.9)
        cdac = run_batch(CdacRunner(sol.policy), TASK1, costs, 10000, 0, 0)
        table = infomax_solve(TASK1, grid(200))
        best = min(
            run_batch(InfomaxRunner(TASK1, table, th), TASK1, costs, 10000, 0, 0).stats().mean_cost
            for th in (0.6, 0.7, 0.8, 0.9)
        )
        stats = cdac.stats()
        assert stats.mean_cost <= best + 3 * stats.se_cost

    def test_rejects_empty(self, fig1):
        with pytest.raises(ValueError):
            run_batch(CdacRunner(fig1.policy), TASK1, COSTS, 0, 0, 0)


class TestConfig:
    def test_defaults(self):
        assert EnvironmentConfig("simple", 0.1).fixation_index() == 0
        assert EnvironmentConfig("peripheral", 0.05).fixation_index() == 6

    def test_round_trip(self, tmp_path):
        env = EnvironmentConfig("peripheral", 0.05, 0.005, betas=(0.62, 0.6, 0.55, 0.5),
                                prior=(0.5, 0.25, 0.25), grid_n=40)
        path = tmp_path / "env.json"
        path.write_text(json.dumps(env.to_dict()))
        assert EnvironmentConfig.load(path) == env

    @pytest.mark.parametrize("data", [
        {"task": "simple", "c": 0.1, "colour": 1},
        {"task": "triangle", "c": 0.1},
        {"task": "simple", "c": -1},
        {"task": "simple", "c": 0.1, "beta": 0.4},
        {"task": "simple", "c": 0.1, "betas": [0.62, 0.6, 0.55, 0.5]},
        {"task": "peripheral", "c": 0.1, "betas": [0.6, 0.62, 0.55, 0.5]},
        {"task": "simple", "c": 0.1, "grid_n": 0},
        {"task": "simple", "c": 0.1, "prior": [0.5, 0.5]},
        {"task": "simple", "c": 0.1, "initial_fixation": "l123"},
        {"c": 0.1},
    ])
    def test_rejects(self, data):
        with pytest.raises(ConfigError):
            EnvironmentConfig.from_dict(data)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            EnvironmentConfig.load(path)


class TestCompare:
    def test_report_reproducible(self):
        env = EnvironmentConfig("simple", 0.1, 0.1, beta=0.8, grid_n=40, trials=1000, seed=3)
        a, b = compare_policies(env), compare_policies(env)
        assert a.to_text() == b.to_text() and a.to_csv() == b.to_csv()
        assert [r.name for r in a.rows] == ["C-DAC", "infomax"]
        assert "accuracy" in a.to_text().splitlines()[1]

    def test_greedy_optional(self):
        env = EnvironmentConfig("simple", 0.1, 0.0, beta=0.8, grid_n=40, trials=1000)
        rep = compare_policies(env, include_greedy=True)
        assert rep.row("greedy-MAP").threshold is not None


class TestTables:
    def test_round_trip_bytes(self, tmp_path, fig1):
        a, b = tmp_path / "a.cdac", tmp_path / "b.cdac"
        save_tables(a, TASK1, COSTS, fig1.values, fig1.policy)
        values, policy = load_tables(a, TASK1, COSTS, 200)
        assert values.values.tobytes() == fig1.values.values.tobytes()
        np.testing.assert_array_equal(policy.codes, fig1.policy.codes)
        save_tables(b, TASK1, COSTS, values, policy)
        assert a.read_bytes() == b.read_bytes()

    def test_peripheral_round_trip(self, tmp_path):
        sol = peripheral_solution(0.05, 0.005)
        path = tmp_path / "p.cdac"
        costs = CostParams(0.05, 0.005)
        save_tables(path, TASK2, costs, sol.values, sol.policy)
        head, values, _ = read_tables(path)
        assert head["task"] == "peripheral" and head["betas"] == list(TASK2.betas)
        assert values.values.tobytes() == sol.values.values.tobytes()

    @pytest.mark.parametrize("kw", [dict(grid_n=199), dict(costs=CostParams(0.2)),
                                    dict(model=SimpleTaskModel(0.8))])
    def test_mismatch_refused(self, tmp_path, fig1, kw):
        path = tmp_path / "t.cdac"
        save_tables(path, TASK1, COSTS, fig1.values, fig1.policy)
        args = dict(model=TASK1, costs=COSTS, grid_n=200) | kw
        with pytest.raises(TableMismatchError):
            load_tables(path, args["model"], args["costs"], args["grid_n"])

    def test_version_refused(self, tmp_path, fig1):
        path = tmp_path / "t.cdac"
        save_tables(path, TASK1, COSTS, fig1.values, fig1.policy)
        raw = path.read_bytes().replace(b'"format_version": 1', b'"format_version": 9')
        path.write_bytes(raw)
        with pytest.raises(TableMismatchError):
            read_tables(path)

    def test_io_error_has_path(self, tmp_path, fig1):
        bad = tmp_path / "missing" / "t.cdac"
        with pytest.raises(OSError, match="missing"):
            save_tables(bad, TASK1, COSTS, fig1.values, fig1.policy)


class TestPolicyMap:
    def test_rows_and_reexport(self, tmp_path, fig1):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        export_policy_map(fig1.policy, 0, a, TASK1)
        export_policy_map(fig1.policy, 0, b, TASK1)
        lines = a.read_text().splitlines()
        assert lines[0] == "p1,p2,p3,action,label"
        assert len(lines) - 1 == 20301
        assert a.read_bytes() == b.read_bytes()

    def test_task2_vertex_stops(self, tmp_path):
        sol = peripheral_solution(0.05, 0.0)
        path = tmp_path / "m.csv"
        export_policy_map(sol.policy, 6, path, TASK2)
        rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
        e1 = next(r for r in rows if r[:3] == ["1", "0", "0"])
        assert int(e1[3]) == 0 and e1[4] == "stop:1"

    def test_pgm(self, tmp_path, fig1):
        csv_path, pgm = tmp_path / "m.csv", tmp_path / "m.pgm"
        export_policy_map(fig1.policy, 0, csv_path, TASK1, pgm)
        raw = pgm.read_bytes()
        header = b"P5\n201 201\n255\n"
        assert raw.startswith(header)
        img = np.frombuffer(raw[len(header):], dtype=np.uint8).reshape(201, 201)
        # column = a1, row = n - a2; the upper-right triangle is background
        assert img[0, 200] == PGM_BACKGROUND
        assert img[200, 200] == PGM_GRAY[fig1.policy.codes[grid(200).vertex(0), 0]]
        assert np.sum(img != PGM_BACKGROUND) == 20301
