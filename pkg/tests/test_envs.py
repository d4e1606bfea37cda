import hashlib
import json

import numpy as np
import pytest

from rmlab import envs
from rmlab.envs import (DirectionRule, EnvironmentSpec, LENGTH_COORD, default_family,
                        make_family, read_dataset, sample_env, shortcut_oracle_label,
                        spec_from_dict, spec_to_dict, subsample, write_dataset)
from rmlab.errors import FamilyError, GenerationError
from rmlab.evaluation import accuracy
from rmlab.training import TrainConfig, train


def big_spec(env_id, seed, beta, alpha, rule, n_test=10000, **kw):
    return EnvironmentSpec(env_id, seed=seed, n_train=100, n_test=n_test,
                           beta=beta, alpha=alpha, direction=rule, **kw)


@pytest.fixture(scope="module")
def mc_family():
    """Environments sized for Monte Carlo checks."""
    specs = [
        big_spec("HI", 11, beta=0.85, alpha=1.0, rule=DirectionRule("fresh"),
                 eta=0.05, length_bias=0.6),
        big_spec("SEP", 12, beta=0.99, alpha=2.0,
                 rule=DirectionRule("orthogonal_to", ref="HI"), eta=0.0),
        big_spec("ANTI", 13, beta=0.85, alpha=1.0,
                 rule=DirectionRule("negated", ref="SEP"), eta=0.05),
        big_spec("OFF", 14, beta=0.0, alpha=0.0, rule=DirectionRule("fresh"),
                 eta=0.05),
    ]
    family = make_family(404, specs)
    tests = {s.env_id: sample_env(family, s.env_id, "test") for s in specs}
    return family, {s.env_id: s for s in specs}, tests


def projection_rule_accuracy(family, env_id, dataset):
    """Strict text-only rule: pick the answer with the larger marker projection."""
    u = family.directions[env_id]
    correct = 0
    for s in dataset.samples:
        chosen, rejected = (s.a1, s.a2) if s.y == 1 else (s.a2, s.a1)
        if chosen @ u > rejected @ u:
            correct += 1
    return correct / len(dataset.samples)


class TestMakeFamily:
    def test_same_seed_identical_invariants(self, small_family):
        _, specs = small_family
        fam1 = make_family(55, list(specs))
        fam2 = make_family(55, list(specs))
        assert np.array_equal(fam1.w, fam2.w)
        assert np.array_equal(fam1.m, fam2.m)

    def test_invariant_matrix_nondegenerate(self, small_family):
        family, _ = small_family
        assert np.linalg.norm(family.w) > 0

    def test_needs_two_environments(self):
        spec = big_spec("X", 1, 0.5, 1.0, DirectionRule("fresh"))
        with pytest.raises(FamilyError):
            make_family(1, [spec])

    def test_duplicate_ids_rejected(self):
        s1 = big_spec("X", 1, 0.5, 1.0, DirectionRule("fresh"))
        s2 = big_spec("X", 2, 0.5, 1.0, DirectionRule("fresh"))
        with pytest.raises(FamilyError):
            make_family(1, [s1, s2])

    def test_bayes_rule_hits_label_noise_ceiling(self, mc_family):
        family, specs, tests = mc_family
        for env_id in ("HI", "ANTI", "OFF"):
            acc = accuracy(family.true_score, tests[env_id])
            assert acc == pytest.approx(1.0 - specs[env_id].eta, abs=0.01)

    def test_explicit_direction_projected_onto_reserved_coords(self):
        vec = np.zeros(16)
        vec[envs.RESERVED_COORDS[0]] = 2.0
        vec[0] = 5.0  # outside the reserved block, must be ignored
        specs = [
            big_spec("E", 21, 0.5, 1.0, DirectionRule("explicit", vector=tuple(vec)),
                     n_test=10),
            big_spec("F", 22, 0.5, 1.0, DirectionRule("fresh"), n_test=10),
        ]
        family = make_family(9, specs)
        u = family.directions["E"]
        assert u[envs.RESERVED_COORDS[0]] == pytest.approx(1.0)
        assert np.linalg.norm(u) == pytest.approx(1.0)


class TestSampleEnv:
    def test_text_only_near_chance_without_shortcut(self):
        spec = envs.EnvironmentSpec("OFF2", seed=31, n_train=4000, n_test=4000,
                                    beta=0.0, alpha=0.0,
                                    direction=DirectionRule("fresh"), eta=0.05,
                                    length_bias=0.5)
        fam = make_family(404, [spec, big_spec("PAD", 99, 0.5, 1.0,
                                               DirectionRule("fresh"), n_test=10)])
        tr = sample_env(fam, "OFF2", "train")
        te = sample_env(fam, "OFF2", "test")
        run = train(TrainConfig(mode="text_only", epochs=8, seed=5), tr)
        assert accuracy(run.primary, te, mask_vision=True) <= 0.55

    def test_near_deterministic_shortcut_is_separable(self, mc_family):
        family, _, tests = mc_family
        assert projection_rule_accuracy(family, "SEP", tests["SEP"]) >= 0.99

    def test_shortcut_locality_own_env(self, mc_family):
        family, specs, tests = mc_family
        for env_id in ("HI", "SEP", "ANTI"):
            acc = projection_rule_accuracy(family, env_id, tests[env_id])
            assert acc >= specs[env_id].beta - 0.02

    def test_shortcut_locality_orthogonal_near_chance(self, mc_family):
        family, _, tests = mc_family
        # HI's rule evaluated where an orthogonal-direction env generated data
        assert projection_rule_accuracy(family, "HI", tests["SEP"]) <= 0.55

    def test_shortcut_locality_anticorrelated_below_chance(self, mc_family):
        family, _, tests = mc_family
        # SEP's rule on the negated-direction env transfers below chance
        assert projection_rule_accuracy(family, "SEP", tests["ANTI"]) <= 0.45

    def test_length_bias_fraction_exact(self, mc_family):
        family, specs, tests = mc_family
        for env_id, ds in tests.items():
            frac = np.mean([s.chosen_length > s.rejected_length for s in ds.samples])
            assert frac == pytest.approx(specs[env_id].length_bias, abs=0.02)

    def test_lengths_are_the_designated_coordinate(self, mc_family):
        _, _, tests = mc_family
        s = tests["HI"].samples[0]
        assert s.length1 == s.a1[LENGTH_COORD]
        assert s.length2 == s.a2[LENGTH_COORD]

    def test_regeneration_bit_identical(self, small_family):
        family, _ = small_family
        d1 = sample_env(family, "P", "test")
        d2 = sample_env(family, "P", "test")
        for a, b in zip(d1.samples, d2.samples):
            assert np.array_equal(a.v, b.v) and np.array_equal(a.a1, b.a1)
            assert a.y == b.y and a.shortcut_applied == b.shortcut_applied

    def test_train_test_disjoint(self, small_sets):
        def key(s):
            return hashlib.sha256(s.v.tobytes() + s.q.tobytes()).hexdigest()

        train_keys = {key(s) for s in small_sets[("P", "train")].samples}
        test_keys = {key(s) for s in small_sets[("P", "test")].samples}
        assert not train_keys & test_keys

    def test_unknown_env_rejected(self, small_family):
        family, _ = small_family
        with pytest.raises(GenerationError):
            sample_env(family, "NOPE", "train")

    def test_invalid_spec_rejected(self):
        with pytest.raises(GenerationError):
            EnvironmentSpec("BAD", seed=1, n_train=10, n_test=10, beta=1.5,
                            alpha=1.0, direction=DirectionRule("fresh"))


class TestShortcutOracle:
    def test_beta_one_all_marked(self):
        specs = [big_spec("ALL", 41, 1.0, 1.0, DirectionRule("fresh"), n_test=300),
                 big_spec("PAD", 42, 0.5, 1.0, DirectionRule("fresh"), n_test=10)]
        family = make_family(2, specs)
        ds = sample_env(family, "ALL", "test")
        assert all(shortcut_oracle_label(s) for s in ds.samples)

    def test_beta_zero_none_marked(self, mc_family):
        _, _, tests = mc_family
        assert not any(shortcut_oracle_label(s) for s in tests["OFF"].samples)

    def test_marked_fraction_matches_beta(self, mc_family):
        _, specs, tests = mc_family
        frac = np.mean([shortcut_oracle_label(s) for s in tests["HI"].samples])
        assert frac == pytest.approx(specs["HI"].beta, abs=0.01)


class TestDefaultFamily:
    def test_direction_relations(self):
        family, _ = default_family(n_train=10, n_test=10)
        assert family.directions["B"] @ family.directions["C"] == pytest.approx(-1.0)
        assert family.directions["A"] @ family.directions["B"] == pytest.approx(0.0)

    def test_paper_profile_length_biases(self):
        _, specs = default_family(n_train=10, n_test=10)
        by_id = {s.env_id: s for s in specs}
        assert by_id["B"].length_bias == 0.315
        assert by_id["A"].length_bias == 0.598
        assert by_id["C"].length_bias == 0.678

    def test_fitted_shortcut_transfers_below_chance_to_negated_env(self):
        family, _ = default_family(n_train=10, n_test=2000)
        test_c = sample_env(family, "C", "test")
        assert projection_rule_accuracy(family, "B", test_c) <= 0.45


class TestDatasetIO:
    def test_jsonl_round_trip_bit_exact(self, small_sets, tmp_path):
        ds = small_sets[("P", "test")]
        path = tmp_path / "p_test.jsonl"
        write_dataset(ds, path)
        back = read_dataset(path, ds.fingerprint)
        assert back.env_id == ds.env_id and back.split == ds.split
        for a, b in zip(ds.samples, back.samples):
            assert np.array_equal(a.v, b.v) and np.array_equal(a.q, b.q)
            assert np.array_equal(a.a1, b.a1) and np.array_equal(a.a2, b.a2)
            assert a.y == b.y and a.shortcut_applied == b.shortcut_applied

    def test_record_schema(self, small_sets, tmp_path):
        ds = small_sets[("P", "test")]
        path = tmp_path / "rec.jsonl"
        write_dataset(ds, path)
        rec = json.loads(path.read_text().splitlines()[0])
        assert set(rec) == {"env_id", "split", "v", "q", "a1", "a2", "y",
                            "shortcut_applied"}

    def test_spec_round_trip(self, small_family):
        _, specs = small_family
        for spec in specs:
            assert spec_from_dict(spec_to_dict(spec)) == spec

    def test_subsample_size_and_determinism(self, small_sets):
        ds = small_sets[("P", "train")]
        sub1 = subsample(ds, 0.25, seed=3)
        sub2 = subsample(ds, 0.25, seed=3)
        assert len(sub1.samples) == int(0.25 * len(ds.samples))
        assert all(np.array_equal(a.v, b.v)
                   for a, b in zip(sub1.samples, sub2.samples))
        with pytest.raises(GenerationError):
            subsample(ds, 0.0, seed=1)
