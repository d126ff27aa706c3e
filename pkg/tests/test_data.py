import json
import logging

import numpy as np
import pytest

from gravnorm.data import (compute_features, jet_axis, load_jets, save_jets,
                           synth_generate, wrap_angle)
from gravnorm.errors import IngestionError, InputError, ParameterError


def p4_from(pt, eta, phi):
    return np.stack([pt * np.cosh(eta), pt * np.cos(phi),
                     pt * np.sin(phi), pt * np.sinh(eta)], axis=1)


class TestComputeFeatures:
    def test_constituent_on_axis_has_zero_deltas(self):
        p4 = p4_from(np.array([100.0]), np.array([0.5]), np.array([1.0]))
        feats = compute_features(p4)
        np.testing.assert_allclose(feats[0, 4:7], 0.0, atol=1e-12)

    def test_single_particle_relative_logs_are_zero(self):
        p4 = p4_from(np.array([250.0]), np.array([-0.3]), np.array([2.0]))
        feats = compute_features(p4)
        assert feats[0, 2] == pytest.approx(0.0, abs=1e-12)  # log(pt/pt_jet)
        assert feats[0, 3] == pytest.approx(0.0, abs=1e-12)  # log(e/e_jet)

    def test_phi_wraps_the_short_way(self):
        # straddling the -pi/pi seam: 3.0 vs -3.0 differ by ~0.283, not 6.0
        p4 = p4_from(np.array([50.0, 50.0]), np.zeros(2), np.array([3.0, -3.0]))
        axis = jet_axis(p4)
        feats = compute_features(p4, axis)
        expected = wrap_angle(3.0 - np.arctan2(axis[2], axis[1]))
        assert feats[0, 5] == pytest.approx(float(expected), abs=1e-12)
        assert abs(feats[0, 5] - feats[1, 5]) == pytest.approx(2 * np.pi - 6.0,
                                                               abs=1e-9)

    def test_zero_momentum_constituent_gets_zero_row(self, caplog):
        p4 = np.array([[100.0, 30.0, 40.0, 0.0], [5.0, 0.0, 0.0, 0.0]])
        with caplog.at_level(logging.WARNING):
            feats = compute_features(p4)
        np.testing.assert_array_equal(feats[1], np.zeros(7))
        assert "zero" in caplog.text

    def test_zero_total_momentum_rejected(self):
        p4 = np.array([[1.0, 0.0, 0.0, 0.0]])
        with pytest.raises(InputError):
            compute_features(p4)

    def test_azimuthal_rotation_invariance(self):
        rng = np.random.default_rng(0)
        pt = rng.uniform(1, 50, 20)
        eta = rng.normal(0, 1, 20)
        phi = rng.uniform(-np.pi, np.pi, 20)
        base = compute_features(p4_from(pt, eta, phi))
        for rot in (0.5, 2.0, -3.0):
            rotated = compute_features(p4_from(pt, eta, wrap_angle(phi + rot)))
            np.testing.assert_allclose(rotated, base, atol=1e-9)


class TestSynthGenerate:
    def test_deterministic(self):
        a = synth_generate(7, 30)
        b = synth_generate(7, 30)
        for ja, jb in zip(a.jets, b.jets):
            np.testing.assert_array_equal(ja.four_vectors, jb.four_vectors)
            assert ja.id == jb.id and ja.label == jb.label

    def test_label_balance(self):
        for n in (100, 101):
            labels = synth_generate(3, n).labels()
            assert abs(int(np.sum(labels == 1)) - int(np.sum(labels == 0))) <= 1

    def test_node_count_bounds(self):
        split = synth_generate(5, 50, n_min=4, n_max=9)
        sizes = [len(j.features) for j in split.jets]
        assert min(sizes) >= 4 and max(sizes) <= 9

    def test_bad_bounds(self):
        with pytest.raises(ParameterError):
            synth_generate(0, 5, n_min=0)
        with pytest.raises(ParameterError):
            synth_generate(0, 5, n_max=500)

    def test_three_prong_class_has_larger_pairwise_delta_r(self):
        # Monte Carlo with the generator itself, fixed seed
        split = synth_generate(11, 1000)

        def mean_pairwise(jet):
            de = jet.features[:, 4]
            dp = jet.features[:, 5]
            dd = np.sqrt((de[:, None] - de) ** 2 + (dp[:, None] - dp) ** 2)
            n = len(de)
            return dd.sum() / (n * (n - 1)) if n > 1 else 0.0

        means = {0: [], 1: []}
        for jet in split.jets:
            means[jet.label].append(mean_pairwise(jet))
        assert np.mean(means[1]) > np.mean(means[0])

    def test_energies_nonnegative(self):
        split = synth_generate(9, 40)
        for jet in split.jets:
            assert np.all(jet.four_vectors[:, 0] >= 0)


class TestRoundTrip:
    @pytest.mark.parametrize("fmt", ["jsonl", "bin"])
    def test_save_load_identity(self, tmp_path, fmt):
        split = synth_generate(13, 20)
        path = tmp_path / f"jets.{fmt}"
        save_jets(split, path, format=fmt)
        loaded = load_jets(path, format=fmt, role="train")
        assert loaded.malformed == 0
        assert len(loaded.jets) == 20
        for a, b in zip(split.jets, loaded.jets):
            assert a.id == b.id and a.label == b.label
            np.testing.assert_array_equal(a.four_vectors, b.four_vectors)
            np.testing.assert_array_equal(a.features, b.features)

    def test_load_without_features_computes_them(self, tmp_path):
        split = synth_generate(17, 5)
        path = tmp_path / "bare.jsonl"
        save_jets(split, path, with_features=False)
        loaded = load_jets(path)
        for a, b in zip(split.jets, loaded.jets):
            np.testing.assert_allclose(b.features, a.features, atol=1e-9)

    def test_empty_file_warns(self, tmp_path, caplog):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with caplog.at_level(logging.WARNING):
            split = load_jets(path)
        assert len(split.jets) == 0
        assert "no records" in caplog.text


class TestMalformedHandling:
    def _write(self, path, records):
        with open(path, "w") as fh:
            for rec in records:
                fh.write(rec + "\n")

    def good_line(self, i=0):
        return json.dumps({"id": f"j{i}", "label": i % 2,
                           "p4": [[10.0, 3.0, 4.0, 0.0], [5.0, 0.0, 3.0, 4.0]]})

    def test_few_malformed_skipped(self, tmp_path):
        path = tmp_path / "mixed.jsonl"
        lines = [self.good_line(i) for i in range(200)]
        lines[50] = "{not json"
        self._write(path, lines)
        split = load_jets(path)
        assert split.malformed == 1
        assert len(split.jets) == 199

    def test_too_many_malformed_aborts_with_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        lines = [self.good_line(i) for i in range(10)]
        lines[3] = json.dumps({"id": "x", "label": 2, "p4": [[1, 0, 0, 0]]})
        self._write(path, lines)
        with pytest.raises(IngestionError) as err:
            load_jets(path)
        assert err.value.line == 4

    @pytest.mark.parametrize("bad", [
        json.dumps({"id": "a", "label": 1, "p4": []}),                      # no nodes
        json.dumps({"id": "a", "label": 1, "p4": [[-1.0, 0, 0, 0]]}),       # E < 0
        json.dumps({"id": "a", "label": 1,
                    "p4": [[1.0, 0, 0]]}),                                  # not 4-vec
        json.dumps({"id": "a", "label": 1,
                    "p4": [[5.0, 0, 3, 4]] * 201}),                         # too long
        json.dumps({"id": "a", "p4": [[5.0, 0, 3, 4]]}),                    # no label
    ])
    def test_invariant_violations_count_as_malformed(self, tmp_path, bad):
        path = tmp_path / "one.jsonl"
        self._write(path, [bad])
        with pytest.raises(IngestionError):
            load_jets(path)

    def test_bin_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"ZZZZ" + b"\x00" * 32)
        with pytest.raises(IngestionError, match="magic"):
            load_jets(path, format="bin")
