import json
import os
import subprocess

import numpy as np
import pytest

import relux


def test_forward_matches_numpy():
    net = relux.random_net(5, 4, 3, seed=2)
    x = np.linspace(0.0, 1.0, 5)
    want = net.a1 @ np.maximum(net.a0 @ x + net.b0, 0.0) + net.b1
    np.testing.assert_allclose(net.logits(x), want, rtol=1e-15, atol=1e-15)
    assert abs(net.probs(x).sum() - 1.0) < 1e-12


def test_dimension_errors_are_raised():
    net = relux.random_net(5, 4, 3, seed=2)
    with pytest.raises(relux.Error):
        net.logits(np.ones(4))


def test_extract_round_trip():
    victim = relux.random_net(16, 4, 3, seed=7)
    out = relux.extract(victim, h=4, seed=1)
    assert out["distinct_found"] == 4
    assert out["ledger"]["total"] <= 50 * 16 * 4
    assert relux.fidelity(victim, out["net"], 2000, 3) == 1.0
    mean_bits, _, unmatched = relux.precision_bits(victim, out["net"])
    assert mean_bits >= 20.0 and unmatched == 0


def test_serialization_is_exact():
    net = relux.random_net(6, 3, 2, seed=4)
    assert relux.deserialize(relux.serialize(net)).identical(net)


def test_two_linear_test_finds_the_kink():
    outcome, at = relux.two_linear_test(lambda t: abs(t - 0.3), -1.0, 2.0, 0.1)
    assert outcome == relux.LinearityOutcome.single_kink
    assert abs(at - 0.3) < 1e-12


def test_hardness_constructions():
    assert relux.rectangle_fraction(4, 4, [1, 2, None, None]) == (1, 16)
    zero = relux.TwoLayerNet.zeros(3, 1, 1)
    witness = relux.brute_force_equiv(zero, relux.subsetsum_net([3, 5, 7], 8, 1))
    np.testing.assert_array_equal(witness, [1.0, 1.0, 0.0])
    assert relux.brute_force_equiv(zero, relux.subsetsum_net([3, 5, 7], 16, 1)) is None


@pytest.mark.skipif("RELUX_CLI" not in os.environ, reason="command-line binary not provided")
def test_cli_extract(tmp_path):
    cli = os.environ["RELUX_CLI"]
    victim = tmp_path / "victim.model"
    relux.save_model(relux.random_net(12, 3, 2, seed=5), str(victim))
    stolen = tmp_path / "stolen.model"
    subprocess.run([cli, "extract", "--oracle", f"local:{victim}", "--d", "12", "--h", "3", "--seed", "1",
                    "--out", str(stolen)], check=True, capture_output=True)
    done = subprocess.run([cli, "eval", "fidelity", "--a", str(stolen), "--b", str(victim), "--seed", "2",
                           "--n", "1000", "--report", "-"], check=True, capture_output=True, text=True)
    assert json.loads(done.stdout)["metrics"]["fidelity"] == 1.0
