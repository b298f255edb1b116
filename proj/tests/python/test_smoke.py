import json
from pathlib import Path

import numpy as np
import pytest

import rgeom

SCHEMAS = Path(__file__).resolve().parents[2] / "schemas"


def load_schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


@pytest.fixture(scope="module")
def phase_sets(tmp_path_factory):
    root = tmp_path_factory.mktemp("sets")
    for kind, seed in [("phase_crystalline", 1), ("phase_liquid", 2)]:
        spec = rgeom.default_synth_spec()
        spec.update(kind=kind, ambient_dim=24, n_samples=150, seed=seed)
        rgeom.synthesize(spec, root / kind)
    return root / "phase_crystalline", root / "phase_liquid"


def test_geometry_on_arrays():
    rng = np.random.default_rng(0)
    frame, _ = np.linalg.qr(rng.standard_normal((32, 5)))
    cloud = (rng.standard_normal((500, 5)) @ frame.T).astype(np.float32)
    assert rgeom.d95(cloud) == 5
    assert 4.0 <= rgeom.mle_dimension(cloud, k=10, seed=1)["median"] <= 6.5

    line = np.outer(np.arange(10), np.linspace(1, 2, 8)).astype(np.float32)
    assert rgeom.coherence(line) == pytest.approx(1.0, abs=1e-9)
    assert rgeom.alignment(np.diff(line, axis=0))["mean"] == pytest.approx(1.0)
    assert rgeom.compactness(274) == pytest.approx(0.502, abs=1e-3)
    assert rgeom.classify_phase(0.63, 0.42, 1.10)["phase"] == "Lattice"


def test_analyze_and_compare_match_the_schemas(phase_sets):
    jsonschema = pytest.importorskip("jsonschema")
    a, b = phase_sets
    summary = rgeom.analyze(a, {"seed": 3})
    jsonschema.validate(summary, load_schema("geometry_summary"))
    assert summary["phase"]["phase"] == "Crystalline"

    report = rgeom.compare(a, b, bootstrap=300, seed=4)
    jsonschema.validate(report, load_schema("comparison_report"))
    by_name = {m["metric"]: m for m in report["metrics"]}
    align = by_name["alignment_mean"]
    assert align["delta"] == pytest.approx(align["b"] - align["a"])
    assert align["ci"]["low"] <= align["delta"] <= align["ci"]["high"]

    csv = rgeom.render_report(report, "csv")
    assert csv.startswith("metric,a,b,delta,delta_percent,ci_low,ci_high,invariant\r\n")
    assert rgeom.compare(a, b, bootstrap=300, seed=4) == report


def test_trajectory_set_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    states = [rng.standard_normal((4 + i, 6)).astype(np.float32) for i in range(3)]
    rgeom.write_set(tmp_path / "set", states, {"model": "m", "domain": "d", "scale": "s"},
                    [{"id": "x0"}, {"id": "x1"}, {"id": "x2"}])
    ts = rgeom.TrajectorySet.open(tmp_path / "set")
    assert len(ts) == 3 and ts.hidden_dim == 6
    assert ts.ids == ["x0", "x1", "x2"]
    # Stored in half precision.
    np.testing.assert_allclose(ts.trajectory(2), states[2], rtol=1e-3, atol=1e-3)
    with pytest.raises(rgeom.FormatError):
        rgeom.TrajectorySet.open(tmp_path / "missing")


def test_operator_training_and_checkpoint(tmp_path):
    spec = rgeom.default_synth_spec()
    spec.update(kind="endpoint_linear", ambient_dim=8, n_samples=600, seed=5)
    rgeom.synthesize(spec, tmp_path / "e")
    h0, h1, ht = rgeom.endpoint_arrays(tmp_path / "e")
    model, report = rgeom.train_operator({"arch": "linear"}, h0, h1, ht, {"lr": 1e-2, "epochs": 20})
    assert report["test"]["relative_mse"] < 0.2
    assert model.parameter_count == 8 * 8 + 8
    model.save(tmp_path / "m.bin")
    again = rgeom.Operator.load(tmp_path / "m.bin")
    np.testing.assert_array_equal(again.forward(h0), model.forward(h0))
    assert rgeom.evaluate_operator(again, h0, h1, ht)["n"] == len(h0)
    assert rgeom.grad_check({"arch": "mlp", "hidden_dim": 4}, probes=10) <= 1e-3
    with pytest.raises(rgeom.NumericalError):
        rgeom.train_operator({"arch": "mlp"}, h0, h1, ht, {"lr": 1e30, "epochs": 2, "weight_decay": 0.0})


def test_probe_and_frozen_decode(tmp_path):
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 2, 1000)
    x = rng.standard_normal((1000, 8)).astype(np.float32)
    x[labels == 1, 0] += 10.0
    out = rgeom.train_probe(x, (labels + 40).tolist())
    assert out["test"]["accuracy"] >= 0.99
    assert out["class_vocab"] == [40, 41]

    u = rng.standard_normal((5, 8)).astype(np.float32)
    state = u[3] * 2.0
    assert rgeom.unembed_decode(u, state) == int(np.argmax(u.astype(np.float64) @ state))
    rgeom.write_unembedding(tmp_path / "u.bin", u)
    np.testing.assert_array_equal(rgeom.read_unembedding(tmp_path / "u.bin"), u)


def test_usage_errors_are_typed():
    with pytest.raises(rgeom.UsageError):
        rgeom.d95(np.zeros((1, 3), dtype=np.float32))
    with pytest.raises(rgeom.Error):
        rgeom.classify_phase(float("nan"), 0.1, 1.0)


def test_malformed_spec_is_a_value_error(tmp_path):
    with pytest.raises(ValueError):
        rgeom.synthesize({"kind": 3}, tmp_path / "x")
