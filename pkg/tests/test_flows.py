import dataclasses
import io
import math
import unittest

import numpy as np

from app.errors import FixedPoint, FlowEscapedChart, ValidationError
from app.expr import Const, Var, parse_expression
from app.flows import (
    CLASSIFICATION_NOTE,
    classification_label,
    classify_fiber,
    detect_period,
    fit_linear,
    integer_directions,
    integrate_flow,
    invariant_drift,
    recurrence_evidence,
    write_trajectory_csv,
)
from app.integrability import casimir_pullback_fields
from app.poisson import VectorField, hamiltonian_vector_field, zero_field
from app.systems import (
    builtin_free_particle,
    builtin_oscillator,
    builtin_oscillator_free_particle,
    builtin_so21,
)


class TestIntegration(unittest.TestCase):
    def test_oscillator_trajectory(self):
        system = builtin_oscillator()
        V = hamiltonian_vector_field(system.integrals[0], system.bivector)
        traj = integrate_flow(V, [1.0, 0.0], 2.0, 1e-10)
        self.assertAlmostEqual(traj.times[-1], 2.0, places=14)
        np.testing.assert_allclose(traj.final, [math.cos(2.0), -math.sin(2.0)], atol=1e-8)
        self.assertGreater(traj.steps, 0)
        self.assertLessEqual(float(np.max(np.diff(traj.times))), 0.02 + 1e-15)

    def test_energy_is_conserved(self):
        system = builtin_oscillator()
        V = hamiltonian_vector_field(system.integrals[0], system.bivector)
        traj = integrate_flow(V, [1.0, 0.0], 10.0, 1e-10)
        self.assertLess(invariant_drift(traj, system.integrals)[0], 1e-8)

    def test_casimir_flow_conserves_so21_integrals(self):
        system = builtin_so21()
        (V,) = casimir_pullback_fields(system)
        traj = integrate_flow(V, [2.0, 0.0, 0.3, 0.2], 10.0, 1e-10)
        for drift in invariant_drift(traj, system.integrals):
            self.assertLess(drift, 1e-8)
        self.assertAlmostEqual(traj.final[1], 10.0, places=8)

    def test_zero_horizon_and_zero_field(self):
        V = zero_field(("q", "p"))
        self.assertEqual(len(integrate_flow(V, [1.0, 2.0], 0.0).times), 1)
        traj = integrate_flow(V, [1.0, 2.0], 1.0)
        np.testing.assert_array_equal(traj.final, [1.0, 2.0])

    def test_rejects_bad_arguments(self):
        V = zero_field(("q", "p"))
        with self.assertRaises(ValidationError):
            integrate_flow(V, [1.0, 2.0], 1.0, tol=0.0)
        with self.assertRaises(ValidationError):
            integrate_flow(V, [1.0, 2.0], -1.0)
        with self.assertRaises(ValidationError):
            integrate_flow(V, [1.0], 1.0)

    def test_escape_from_chart(self):
        V = VectorField(("q",), (parse_expression("sqrt(1 - q)"),))
        with self.assertRaises(FlowEscapedChart) as ctx:
            integrate_flow(V, [2.0], 1.0)
        self.assertEqual(ctx.exception.time, 0.0)

    def test_trajectory_leaving_the_chart(self):
        # p' = sqrt(1 - q) is undefined once q = t passes 1
        V = VectorField(("q", "p"), (parse_expression("1"), parse_expression("sqrt(1 - q)")))
        with self.assertRaises(FlowEscapedChart) as ctx:
            integrate_flow(V, [0.0, 0.0], 5.0)
        self.assertGreater(ctx.exception.time, 0.5)
        self.assertLess(ctx.exception.time, 5.0)
        traj = integrate_flow(V, [0.0, 0.0], 5.0, on_escape="stop")
        self.assertIsNotNone(traj.escaped_at)
        self.assertLessEqual(float(np.max(traj.column("q"))), 1.0)


class TestTrajectoryOutput(unittest.TestCase):
    def test_csv_layout(self):
        V = VectorField(("q", "p"), (Var("p"), parse_expression("0")))
        traj = integrate_flow(V, [0.0, 1.0], 1.0, max_step=0.5)
        buffer = io.StringIO()
        write_trajectory_csv(traj, buffer)
        lines = buffer.getvalue().splitlines()
        self.assertEqual(lines[0], "t,q,p")
        self.assertEqual(lines[1], "0,0,1")
        self.assertEqual(len(lines), len(traj.times) + 1)
        last = [float(v) for v in lines[-1].split(",")]
        self.assertAlmostEqual(last[0], 1.0, places=14)
        self.assertAlmostEqual(last[1], 1.0, places=12)

    def test_fit_linear(self):
        V = VectorField(("q", "p"), (Var("p"), parse_expression("0")))
        traj = integrate_flow(V, [0.0, 2.0], 3.0)
        slope, intercept, residual = fit_linear(traj, Var("q"))
        self.assertAlmostEqual(slope, 2.0, places=9)
        self.assertAlmostEqual(intercept, 0.0, places=9)
        self.assertLess(residual, 1e-9)


class TestRecurrence(unittest.TestCase):
    def test_oscillator_period(self):
        system = builtin_oscillator()
        V = hamiltonian_vector_field(system.integrals[0], system.bivector)
        period = detect_period(V, [1.0, 0.0], t_max=20.0, eps=1e-4)
        self.assertIsNotNone(period)
        self.assertLess(abs(period - 2 * math.pi), 1e-5)

    def test_period_is_stable_across_eps(self):
        system = builtin_oscillator()
        V = hamiltonian_vector_field(system.integrals[0], system.bivector)
        for eps in (1e-3, 1e-5):
            period = detect_period(V, [1.0, 0.0], t_max=20.0, eps=eps)
            self.assertIsNotNone(period, eps)
            self.assertLess(abs(period - 2 * math.pi), 1e-6, eps)

    def test_free_particle_never_returns(self):
        system = builtin_free_particle()
        V = hamiltonian_vector_field(system.integrals[0], system.bivector)
        evidence = recurrence_evidence(V, [0.0, 1.0], 20.0, 1e-4)
        self.assertFalse(evidence.periodic)
        self.assertTrue(evidence.monotone)
        self.assertAlmostEqual(evidence.final_distance, 20.0, places=6)

    def test_angle_coordinates_wrap(self):
        V = VectorField(("phi",), (parse_expression("1"),))
        mask = np.array([True])
        period = detect_period(V, [0.5], t_max=10.0, eps=1e-6, angle_mask=mask)
        self.assertAlmostEqual(period, 2 * math.pi, places=6)
        self.assertIsNone(detect_period(V, [0.5], t_max=10.0, eps=1e-6))

    def test_fixed_point(self):
        with self.assertRaises(FixedPoint):
            recurrence_evidence(zero_field(("q", "p")), [0.0, 0.0], 10.0, 1e-4)


class TestClassification(unittest.TestCase):
    def test_labels(self):
        self.assertEqual(classification_label(1, 0), "R^1")
        self.assertEqual(classification_label(1, 1), "T^1")
        self.assertEqual(classification_label(2, 1), "R^1 x T^1")
        self.assertEqual(classification_label(0, 0), "R^0")

    def test_integer_directions(self):
        directions = integer_directions(2, 2)
        self.assertEqual(directions[:2], [(1, 0), (0, 1)])
        self.assertIn((1, -1), directions)
        self.assertNotIn((2, 2), directions)
        self.assertNotIn((-1, 1), directions)
        self.assertEqual(len(set(directions)), len(directions))

    def test_so21_fiber_is_a_line(self):
        report = classify_fiber(builtin_so21(), [2.0, 0.0, 0.3, 0.2], t_max=100.0, eps=1e-4)
        self.assertEqual((report.m, report.r), (1, 0))
        self.assertEqual(report.classification, "R^1")
        self.assertEqual(report.note, CLASSIFICATION_NOTE)

    def test_oscillator_fiber_is_a_circle(self):
        report = classify_fiber(builtin_oscillator(), [1.0, 0.0], t_max=100.0, eps=1e-4)
        self.assertEqual(report.classification, "T^1")
        self.assertLess(abs(report.directions[0].period - 2 * math.pi), 1e-5)

    def test_oscillator_free_particle_fiber_is_a_cylinder(self):
        report = classify_fiber(builtin_oscillator_free_particle(), [1.0, 0.0, 0.0, 1.0], t_max=100.0, eps=1e-4)
        self.assertEqual(report.classification, "R^1 x T^1")
        document = report.to_dict()
        self.assertEqual(document["directions"][0]["coefficients"], [1, 0])
        self.assertTrue(document["directions"][0]["periodic"])
        self.assertFalse(document["directions"][1]["periodic"])

    def test_rescaled_casimirs_keep_the_classification(self):
        system = builtin_oscillator_free_particle()
        c1, c2 = system.casimirs
        rescaled = dataclasses.replace(system, casimirs=(Const(3.0) * c1, Const(0.5) * c2)).validate()
        report = classify_fiber(rescaled, [1.0, 0.0, 0.0, 1.0], t_max=100.0, eps=1e-4)
        self.assertEqual(report.classification, "R^1 x T^1")
        self.assertLess(abs(report.directions[0].period - 2 * math.pi / 3), 1e-5)

    def test_start_point_off_the_chart(self):
        with self.assertRaises(ValidationError) as ctx:
            classify_fiber(builtin_so21(), [1.0, 0.0, 0.0, 2.0], t_max=10.0, eps=1e-4)
        self.assertIn("off the chart", str(ctx.exception))


if __name__ == "__main__":
    unittest.main()
