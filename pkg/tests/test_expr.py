import math
import unittest

import numpy as np

from app import expr as expr_module
from app.errors import DomainError, ExpressionSyntaxError, UnboundVariable
from app.expr import (
    Const,
    Var,
    artanh,
    compile_expression,
    differentiate,
    evaluate,
    fold_constants,
    format_number,
    log,
    parse_expression,
    sqrt,
    substitute,
    to_text,
    variables,
)

ROUND_TRIP_SAMPLES = [
    "x^2 + 3*y",
    "(a + b) * c",
    "a - (b - c)",
    "a - b - c",
    "a / (b * c)",
    "-x^2",
    "(-2)^2",
    "x^-1",
    "sqrt(r^2 - x1^2) * cosh(gamma)",
    "exp(-t) * sin(2*t) / (1 + cos(t)^2)",
    "2^3^2",
]

# random expressions for the derivative oracle
_FUNCTIONS = ("sin", "cos", "exp", "sinh", "cosh")
_FRACTIONAL_EXPONENTS = (0.5, -0.5, 1.5)


def _positive(rng, depth: int):
    return Const(1.5) + _random_expression(rng, depth) ** 2


def _random_expression(rng, depth: int):
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.3:
            return Const(float(rng.integers(1, 4)))
        return Var(str(rng.choice(["x", "y", "z"])))
    choice = rng.integers(0, 10)
    if choice == 0:
        return _random_expression(rng, depth - 1) + _random_expression(rng, depth - 1)
    if choice == 1:
        return _random_expression(rng, depth - 1) * _random_expression(rng, depth - 1)
    if choice == 2:
        return _random_expression(rng, depth - 1) - _random_expression(rng, depth - 1)
    if choice == 3:
        return _random_expression(rng, depth - 1) ** 2
    if choice == 4:
        return _random_expression(rng, depth - 1) / _positive(rng, depth - 1)
    if choice == 5:
        return sqrt(_positive(rng, depth - 1))
    if choice == 6:
        return log(_positive(rng, depth - 1))
    if choice == 7:
        return -_random_expression(rng, depth - 1)
    if choice == 8:
        return _positive(rng, depth - 1) ** float(rng.choice(_FRACTIONAL_EXPONENTS))
    fn = str(rng.choice(_FUNCTIONS))
    return getattr(expr_module, fn)(_random_expression(rng, depth - 1) * Const(0.5))


class TestEvaluate(unittest.TestCase):
    def test_polynomial(self):
        self.assertEqual(evaluate(parse_expression("x^2 + 3*y"), {"x": 2.0, "y": 1.0}), 7.0)

    def test_functions(self):
        e = parse_expression("sqrt(x) + log(y) + sinh(0) + cosh(0)")
        self.assertAlmostEqual(evaluate(e, {"x": 4.0, "y": math.e}), 4.0, places=14)

    def test_domain_errors(self):
        with self.assertRaises(DomainError):
            evaluate(parse_expression("sqrt(x)"), {"x": -1.0})
        with self.assertRaises(DomainError):
            evaluate(parse_expression("log(x)"), {"x": 0.0})
        with self.assertRaises(DomainError):
            evaluate(parse_expression("1 / x"), {"x": 0.0})
        with self.assertRaises(DomainError):
            evaluate(parse_expression("exp(x)"), {"x": 1e6})

    def test_unbound_variable(self):
        with self.assertRaises(UnboundVariable) as ctx:
            evaluate(parse_expression("x + z"), {"x": 1.0})
        self.assertEqual(ctx.exception.name, "z")
        with self.assertRaises(UnboundVariable):
            compile_expression(parse_expression("x + z"), ("x", "y"))

    def test_compiled_matches_mapping(self):
        e = parse_expression("x * cos(y) - y^3 / 2")
        fn = compile_expression(e, ("x", "y"))
        self.assertEqual(fn([1.5, -0.25]), evaluate(e, {"x": 1.5, "y": -0.25}))

    def test_overflow_is_a_domain_error(self):
        x = Var("x")
        with self.assertRaises(DomainError):
            evaluate(x * x - x * x, {"x": 1e200})
        with self.assertRaises(DomainError):
            evaluate(parse_expression("x + y"), {"x": 1e308, "y": 1e308})
        with self.assertRaises(DomainError):
            evaluate(parse_expression("x / y"), {"x": 1e308, "y": 1e-10})
        with self.assertRaises(DomainError):
            compile_expression(parse_expression("x^2"), ("x",))([1e200])

    def test_artanh(self):
        self.assertAlmostEqual(evaluate(artanh(Var("u")), {"u": 0.3}), math.atanh(0.3), places=14)


class TestParser(unittest.TestCase):
    def test_unary_minus_is_looser_than_power(self):
        self.assertEqual(evaluate(parse_expression("-x^2"), {"x": 3.0}), -9.0)

    def test_negative_literal_folds(self):
        self.assertEqual(parse_expression("-2"), Const(-2.0))

    def test_power_is_right_associative(self):
        self.assertEqual(evaluate(parse_expression("2^3^2"), {}), 512.0)

    def test_exponent_must_be_constant(self):
        with self.assertRaises(ExpressionSyntaxError):
            parse_expression("x^y")

    def test_error_columns(self):
        with self.assertRaises(ExpressionSyntaxError) as ctx:
            parse_expression("x $ y")
        self.assertEqual(ctx.exception.column, 3)
        with self.assertRaises(ExpressionSyntaxError) as ctx:
            parse_expression("x +")
        self.assertEqual(ctx.exception.column, 4)
        self.assertIn("end of expression", str(ctx.exception))

    def test_unknown_function(self):
        with self.assertRaises(ExpressionSyntaxError) as ctx:
            parse_expression("foo(x)")
        self.assertEqual(ctx.exception.column, 1)

    def test_out_of_range_literal(self):
        with self.assertRaises(ExpressionSyntaxError) as ctx:
            parse_expression("x + 1e400")
        self.assertEqual(ctx.exception.column, 5)

    def test_unbalanced_parentheses(self):
        with self.assertRaises(ExpressionSyntaxError):
            parse_expression("(x + 1")
        with self.assertRaises(ExpressionSyntaxError):
            parse_expression("x + 1)")

    def test_line_and_offset_reported(self):
        with self.assertRaises(ExpressionSyntaxError) as ctx:
            parse_expression("x * * y", line=7, column_offset=5)
        self.assertEqual((ctx.exception.line, ctx.exception.column), (7, 10))
        self.assertTrue(str(ctx.exception).startswith("line 7, column 10:"))

    def test_printing_is_a_fixpoint(self):
        for text in ROUND_TRIP_SAMPLES:
            printed = to_text(parse_expression(text))
            self.assertEqual(to_text(parse_expression(printed)), printed, text)

    def test_minimal_parentheses(self):
        self.assertEqual(to_text(parse_expression("(a + b) * c")), "(a + b) * c")
        self.assertEqual(to_text(parse_expression("a - (b - c)")), "a - (b - c)")
        self.assertEqual(to_text(parse_expression("((a)) - b - c")), "a - b - c")
        self.assertEqual(to_text(parse_expression("-x^2")), "-x^2")

    def test_format_number(self):
        self.assertEqual(format_number(2.0), "2")
        self.assertEqual(format_number(-3.0), "-3")
        self.assertEqual(format_number(0.5), "0.5")


class TestStructure(unittest.TestCase):
    def test_variables(self):
        self.assertEqual(variables(parse_expression("x*y + sin(z) + 2")), frozenset({"x", "y", "z"}))

    def test_substitute(self):
        e = substitute(parse_expression("x1^2 + x2"), {"x1": parse_expression("a + 1"), "x2": Var("b")})
        self.assertEqual(evaluate(e, {"a": 2.0, "b": 0.5}), 9.5)

    def test_fold_constants(self):
        self.assertEqual(fold_constants(parse_expression("0*x + 1*y")), Var("y"))
        self.assertEqual(fold_constants(parse_expression("2 * 3 + 1")), Const(7.0))
        self.assertEqual(fold_constants(parse_expression("x^1")), Var("x"))
        folded = fold_constants(parse_expression("0 - (0 - x)"))
        self.assertEqual(folded, Var("x"))

    def test_fold_is_idempotent(self):
        for text in ROUND_TRIP_SAMPLES:
            once = fold_constants(parse_expression(text))
            self.assertEqual(fold_constants(once), once, text)

    def test_fold_keeps_overflowing_constants(self):
        folded = fold_constants(parse_expression("x + 1e308*10"))
        text = to_text(folded)
        self.assertNotIn("inf", text)
        self.assertEqual(to_text(parse_expression(text)), text)
        with self.assertRaises(DomainError):
            evaluate(folded, {"x": 1.0})

    def test_fold_preserves_values(self):
        rng = np.random.default_rng(23)
        checked = 0
        while checked < 200:
            e = _random_expression(rng, 3)
            folded = fold_constants(e)
            point = {name: float(rng.uniform(-1.0, 1.0)) for name in ("x", "y", "z")}
            try:
                expected = evaluate(e, point)
            except DomainError:
                continue
            self.assertAlmostEqual(evaluate(folded, point), expected, delta=1e-12 * max(1.0, abs(expected)), msg=to_text(e))
            checked += 1

    def test_fold_keeps_undefined_constants(self):
        # folding must not turn an off-domain constant into a value
        e = fold_constants(parse_expression("sqrt(0 - 1)"))
        with self.assertRaises(DomainError):
            evaluate(e, {})


class TestDifferentiate(unittest.TestCase):
    def test_product_and_power(self):
        d = differentiate(parse_expression("x^2*y"), "x")
        self.assertEqual(evaluate(d, {"x": 3.0, "y": 2.0}), 12.0)

    def test_independent_variable_is_zero(self):
        self.assertEqual(differentiate(parse_expression("sin(y)"), "x"), Const(0.0))

    def test_chain_rule(self):
        d = differentiate(parse_expression("sqrt(r^2 - x1^2) * cosh(gamma)"), "x1")
        point = {"r": 2.0, "x1": 0.5, "gamma": 0.3}
        rho = math.sqrt(4.0 - 0.25)
        self.assertAlmostEqual(evaluate(d, point), -0.5 / rho * math.cosh(0.3), places=14)

    def test_quotient(self):
        d = differentiate(parse_expression("x / (1 + x^2)"), "x")
        self.assertAlmostEqual(evaluate(d, {"x": 2.0}), (1 - 4) / 25, places=14)

    def test_matches_central_differences(self):
        rng = np.random.default_rng(11)
        h = 1e-6
        checked = 0
        while checked < 500:
            e = _random_expression(rng, 3)
            point = {name: float(rng.uniform(-1.0, 1.0)) for name in ("x", "y", "z")}
            var = str(rng.choice(["x", "y", "z"]))
            try:
                exact = evaluate(differentiate(e, var), point)
                up = evaluate(e, {**point, var: point[var] + h})
                down = evaluate(e, {**point, var: point[var] - h})
            except DomainError:
                continue
            approx = (up - down) / (2 * h)
            scale = max(1.0, abs(exact), abs(evaluate(e, point)))
            self.assertLess(abs(exact - approx), 1e-6 * scale, to_text(e))
            checked += 1


if __name__ == "__main__":
    unittest.main()
