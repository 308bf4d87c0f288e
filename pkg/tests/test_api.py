import json
import math
import os
import tempfile
import unittest

from app import create_app

CUSTOM_SYSTEM = """
[system]
name = custom-oscillator
n = 1
k = 1
m = 1

[coordinates]
q : linear
p : linear

[structure]
kind = symplectic
Omega[1,2] = -1

[integrals]
H1 = (q^2 + p^2) / 2

[casimirs]
C1 = x1

[sampling]
q in [0.5, 1.5]
p in [-0.5, 0.5]
"""


class TestApi(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()
        with open(os.path.join(self.tmpdir.name, "custom.system"), "w", encoding="utf-8") as fh:
            fh.write(CUSTOM_SYSTEM)
        self.app = create_app({
            "TESTING": True,
            "SYSTEMS_DIR": self.tmpdir.name,
            "POINTS": 10,
            "SEED": 3,
        })
        self.client = self.app.test_client()

    def tearDown(self):
        self.tmpdir.cleanup()

    def test_health(self):
        r = self.client.get("/api/health")
        self.assertEqual(r.status_code, 200)
        self.assertTrue(r.get_json()["ok"])

    def test_builtins(self):
        r = self.client.get("/api/builtins")
        self.assertEqual(r.status_code, 200)
        items = r.get_json()["items"]
        self.assertIn("so21", items)
        self.assertEqual(items, sorted(items))

    def test_get_builtin_system_text(self):
        r = self.client.get("/api/systems/so21")
        self.assertEqual(r.status_code, 200)
        self.assertTrue(r.mimetype.startswith("text/plain"))
        text = r.get_data(as_text=True)
        self.assertIn("[darboux]", text)
        self.assertIn("H2 = sqrt(r^2 - x1^2) * cosh(gamma)", text)

    def test_get_system_from_directory(self):
        r = self.client.get("/api/systems/custom")
        self.assertEqual(r.status_code, 200)
        self.assertIn("name = custom-oscillator", r.get_data(as_text=True))

    def test_unknown_system_is_404(self):
        r = self.client.get("/api/systems/nowhere")
        self.assertEqual(r.status_code, 404)
        self.assertEqual(r.get_json()["error"], "Not found")

    def test_verify_builtin_uses_app_defaults(self):
        r = self.client.post("/api/verify", json={"builtin": "so21"})
        self.assertEqual(r.status_code, 200)
        report = r.get_json()
        self.assertTrue(report["passed"])
        self.assertEqual((report["seed"], report["points"]), (3, 10))
        self.assertEqual(report["checks"]["completeness"]["status"], "advisory")

    def test_verify_is_deterministic(self):
        body = {"builtin": "oscillator", "seed": 7, "points": 8}
        first = self.client.post("/api/verify", json=body).get_data()
        second = self.client.post("/api/verify", json=body).get_data()
        self.assertEqual(first, second)

    def test_verify_posted_system_text(self):
        r = self.client.post("/api/verify", json={"system": CUSTOM_SYSTEM, "points": 5})
        self.assertEqual(r.status_code, 200)
        self.assertEqual(r.get_json()["system"], "custom-oscillator")

    def test_verify_failing_system_is_still_200(self):
        with open(os.path.join(os.path.dirname(__file__), "..", "data", "systems", "fixtures", "so21_wrong_casimir.system"), encoding="utf-8") as fh:
            text = fh.read()
        r = self.client.post("/api/verify", json={"system": text})
        self.assertEqual(r.status_code, 200)
        self.assertFalse(r.get_json()["passed"])

    def test_verify_input_errors(self):
        r = self.client.post("/api/verify", json={"builtin": "so21", "system": CUSTOM_SYSTEM})
        self.assertEqual(r.status_code, 400)
        self.assertIn("exactly one", r.get_json()["error"])
        r = self.client.post("/api/verify", json={"system": CUSTOM_SYSTEM.replace("H1 = (q^2", "H1 = (q^^2")})
        self.assertEqual(r.status_code, 400)
        self.assertIn("line", r.get_json()["error"])
        r = self.client.post("/api/verify", json={"builtin": "so21", "points": "many"})
        self.assertEqual(r.status_code, 400)
        r = self.client.post("/api/verify", json=["so21"])
        self.assertEqual(r.status_code, 400)

    def test_unknown_builtin_is_404(self):
        r = self.client.post("/api/verify", json={"builtin": "so(2,1)"})
        self.assertEqual(r.status_code, 404)

    def test_bracket(self):
        r = self.client.post("/api/bracket", json={"builtin": "so21-coalgebra", "f": "x2", "g": "x3"})
        self.assertEqual(r.status_code, 200)
        data = r.get_json()
        self.assertEqual(len(data["samples"]), 5)
        for sample in data["samples"]:
            self.assertEqual(sample["value"], sample["point"]["x1"])

    def test_bracket_of_named_integrals(self):
        r = self.client.post("/api/bracket", json={"builtin": "so21", "f": "H3", "g": "H1"})
        self.assertEqual(r.status_code, 200)
        for sample in r.get_json()["samples"]:
            point = sample["point"]
            rho = (point["r"] ** 2 - point["x1"] ** 2) ** 0.5
            self.assertAlmostEqual(sample["value"], rho * math.cosh(point["gamma"]), places=9)

    def test_bracket_errors(self):
        r = self.client.post("/api/bracket", json={"builtin": "so21", "f": "x1 +", "g": "y"})
        self.assertEqual(r.status_code, 400)
        self.assertIn("column", r.get_json()["error"])
        r = self.client.post("/api/bracket", json={"builtin": "so21", "f": "z", "g": "y"})
        self.assertEqual(r.status_code, 400)
        r = self.client.post("/api/bracket", json={"builtin": "so21", "g": "y"})
        self.assertEqual(r.status_code, 400)

    def test_classify(self):
        r = self.client.post("/api/classify", json={"builtin": "oscillator", "x0": [1.0, 0.0]})
        self.assertEqual(r.status_code, 200)
        data = r.get_json()
        self.assertEqual(data["system"], "oscillator")
        self.assertEqual(data["classification"], "T^1")

    def test_classify_errors(self):
        r = self.client.post("/api/classify", json={"builtin": "oscillator", "x0": [1.0]})
        self.assertEqual(r.status_code, 400)
        r = self.client.post("/api/classify", json={"builtin": "oscillator", "bound": 0})
        self.assertEqual(r.status_code, 400)
        r = self.client.post("/api/classify", json={"builtin": "so21", "x0": [1.0, 0.0, 0.0, 2.0]})
        self.assertEqual(r.status_code, 400)
        self.assertIn("off the chart", r.get_json()["error"])

    def test_reports_keep_key_order(self):
        r = self.client.post("/api/verify", json={"builtin": "free-particle", "points": 4})
        keys = list(json.loads(r.get_data(as_text=True)).keys())
        self.assertEqual(keys[:3], ["system", "passed", "n"])


if __name__ == "__main__":
    unittest.main()
