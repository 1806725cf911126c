import csv
from dataclasses import replace

import numpy as np
import pytest

from fcsdpc.checks import check_hessian_cache
from fcsdpc.data import build_hankel
from fcsdpc.experiment import control_set_of, plant_of, scenario_for
from fcsdpc.loop import (ReferenceSignal, XiBuffer, checksum, controller_step,
                         run_closed_loop, steps_header, timing_summary, warmup, write_steps_csv)
from fcsdpc.plant import Trajectory, is_feasible, step


@pytest.fixture(scope="module")
def scenario(cfg):
    sc, _ = scenario_for(replace(cfg, cl_steps=100), 2, audit=True)
    return sc


@pytest.fixture(scope="module")
def loop_logs(scenario):
    return run_closed_loop(scenario)


class TestWarmup:
    def test_fills_window(self, cfg):
        buf, x = warmup(plant_of(cfg), control_set_of(cfg), 4, seed=0)
        assert buf.N_p == 4 and len(buf.y_hist) == 4 and x.shape == (cfg.n,)
        assert is_feasible(np.concatenate(buf.u_hist), control_set_of(cfg),
                           control_set_of(cfg).rest())

    def test_deterministic(self, cfg):
        a, xa = warmup(plant_of(cfg), control_set_of(cfg), 4, seed=3)
        b, xb = warmup(plant_of(cfg), control_set_of(cfg), 4, seed=3)
        np.testing.assert_array_equal(a.xi(), b.xi())
        np.testing.assert_array_equal(xa, xb)

    def test_xi_matches_hankel_column(self, cfg):
        plant, cs = plant_of(cfg), control_set_of(cfg)
        N_p = 4
        buf, x = warmup(plant, cs, N_p, seed=1)
        us, ys = list(buf.u_hist), list(buf.y_hist)
        u = cs.rest()
        for _ in range(3):  # pad so the window fits one Hankel column with N_f = 1
            x, y = step(plant, x, u)
            us.append(u)
            ys.append(y)
        D = build_hankel(Trajectory(u=np.array(us), y=np.array(ys)), N_p, 1)
        np.testing.assert_array_equal(D.Wp[:, 0], buf.xi())

    def test_shift(self):
        buf = XiBuffer((np.array([1.0]), np.array([2.0])), (np.array([3.0]), np.array([4.0])))
        nxt = buf.shifted([5.0], [6.0])
        np.testing.assert_array_equal(nxt.xi(), [2.0, 5.0, 4.0, 6.0])
        np.testing.assert_array_equal(nxt.u_prev, [5.0])


class TestReference:
    def test_constant(self):
        ref = ReferenceSignal({"kind": "constant", "value": [1.0, -1.0]}, 2)
        np.testing.assert_array_equal(ref.window(0, 2), [1, -1, 1, -1])

    def test_sine(self):
        ref = ReferenceSignal({"kind": "sine", "amplitude": 2.0, "period": 4}, 1)
        np.testing.assert_allclose(ref.window(0, 4), [2, 0, -2, 0], atol=1e-12)

    def test_steps(self):
        ref = ReferenceSignal({"kind": "steps", "values": [0.0, 1.0], "every": 2}, 1)
        np.testing.assert_array_equal([ref(k)[0] for k in range(6)], [0, 0, 1, 1, 0, 0])

    def test_unknown(self):
        with pytest.raises(ValueError):
            ReferenceSignal({"kind": "chirp"}, 1)


class TestControllerStep:
    def test_deterministic_and_methods_agree(self, scenario):
        ctrl = scenario.controller
        buf, _ = warmup(scenario.plant, ctrl.cs, ctrl.N_p, 0)
        u1, e1 = controller_step(buf, ctrl, scenario.reference, 0, "SDA")
        u2, e2 = controller_step(buf, ctrl, scenario.reference, 0, "SDA")
        u3, e3 = controller_step(buf, ctrl, scenario.reference, 0, "ENUM")
        np.testing.assert_array_equal(u1, u2)
        np.testing.assert_array_equal(u1, u3)
        assert e1.objective == e3.objective
        assert e1.step_time_ns >= e1.result.wall_time_ns > 0

    def test_problem_matches_recondensation(self, scenario, rng):
        ctrl = scenario.controller
        xi = rng.standard_normal(ctrl.F_xi.shape[1])
        u_prev = ctrl.cs.rest()
        y_ref = scenario.reference.window(5, ctrl.N_f)
        fresh = ctrl.condensed(xi, u_prev, y_ref)
        np.testing.assert_allclose(ctrl.problem(xi, u_prev, y_ref).target, fresh.u_unc_t,
                                   rtol=1e-9, atol=1e-9)


class TestClosedLoop:
    def test_lengths_and_agreement(self, loop_logs):
        sda, enum = loop_logs["SDA"], loop_logs["ENUM"]
        assert len(sda) == len(enum) == 100
        for a, b in zip(sda, enum):
            np.testing.assert_array_equal(a.u_applied, b.u_applied)
            np.testing.assert_array_equal(a.y_measured, b.y_measured)

    def test_hessian_never_changes(self, scenario, loop_logs):
        ref = scenario.controller.hessian_checksum()
        sums = {e.hessian_checksum for logs in loop_logs.values() for e in logs}
        assert sums == {ref}
        assert scenario.controller.factorizations == 1

    def test_buffer_tracks_history(self, scenario, loop_logs):
        logs = loop_logs["SDA"]
        N_p = scenario.controller.N_p
        buf, _ = warmup(scenario.plant, scenario.controller.cs, N_p, scenario.seed)
        us, ys = list(buf.u_hist), list(buf.y_hist)
        for e in logs:
            np.testing.assert_array_equal(e.xi, np.concatenate(us[-N_p:] + ys[-N_p:]))
            us.append(e.u_applied)
            ys.append(e.y_measured)

    def test_inputs_respect_bound(self, scenario, loop_logs):
        cs = scenario.controller.cs
        buf, _ = warmup(scenario.plant, cs, scenario.controller.N_p, scenario.seed)
        prev = buf.u_prev
        for e in loop_logs["SDA"]:
            assert is_feasible(e.u_applied, cs, prev)
            prev = e.u_applied

    def test_states_follow_plant(self, scenario, loop_logs):
        logs = loop_logs["SDA"]
        for a, b in zip(logs, logs[1:]):
            x, _ = step(scenario.plant, a.x_true, a.u_applied)
            np.testing.assert_allclose(b.x_true, x, atol=1e-12)

    def test_zero_steps(self, scenario):
        logs = run_closed_loop(replace(scenario, steps=0, audit=False))
        assert logs == {"SDA": [], "ENUM": []}

    def test_property_suite(self, cfg):
        res = check_hessian_cache(cfg, steps=100, N_f=2)
        assert res.passed, res.detail


class TestTimingSummary:
    def test_five_samples(self):
        s = timing_summary({"SDA": [1, 2, 3, 4, 5]})["SDA"]
        assert (s.median, s.q25, s.q75, s.min, s.max) == (3, 2, 4, 1, 5)
        assert s.outliers == []

    def test_outlier(self):
        s = timing_summary({"SDA": [1, 1, 1, 1, 100]})["SDA"]
        assert s.outliers == [100.0]

    def test_empty_method_omitted(self):
        assert list(timing_summary({"SDA": [1.0], "ENUM": []})) == ["SDA"]

    def test_pooling(self, loop_logs):
        pooled = timing_summary(loop_logs["SDA"] + loop_logs["ENUM"])
        for method, logs in loop_logs.items():
            direct = timing_summary({method: [e.step_time_ns for e in logs]})[method]
            assert pooled[method] == direct


class TestOutputs:
    def test_header(self):
        assert steps_header(2, 1) == ["k", "method", "u_1", "u_2", "y_1", "cost", "nodes",
                                      "solve_time_ns"]

    def test_steps_csv(self, scenario, loop_logs, tmp_path):
        path = tmp_path / "steps.csv"
        logs = loop_logs["SDA"]
        write_steps_csv(logs, path, scenario.controller.cs.m, scenario.plant.p)
        rows = list(csv.reader(path.open()))
        assert rows[0] == steps_header(scenario.controller.cs.m, scenario.plant.p)
        assert len(rows) == len(logs) + 1
        assert int(rows[1][-1]) == logs[0].step_time_ns

    def test_checksum(self):
        a = np.arange(4.0)
        assert checksum(a) == checksum(a.copy()) != checksum(a + 1e-16 + 1)
