import numpy as np
import pytest

from rrmbench import envgen, optim
from rrmbench.optim import NetworkConfig


def sm1_env(n=8, **kw):
    return envgen.EnvConfig(network=NetworkConfig(num_bs=1, num_users=1,
                                                  num_subcarriers=n), **kw)


class TestUniverse:
    def test_paper_scale_cardinality(self):
        assert envgen.build_universe(32, 128).cardinality == 4096

    def test_degenerate(self):
        u = envgen.build_universe(1, 1)
        assert u.pairs() == [(1, 1)]

    def test_exhaustive_enumeration(self):
        u = envgen.build_universe(2, 3)
        assert u.pairs() == [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3)]

    def test_zero_bounds(self):
        with pytest.raises(ValueError):
            envgen.build_universe(0, 4)


class TestSubset:
    def test_full_subset(self):
        u = envgen.build_universe(2, 2)
        spec = envgen.sample_subset(u, 4, seed=0)
        assert sorted(spec.pairs) == u.pairs()

    def test_deterministic(self):
        u = envgen.build_universe(4, 8)
        a = envgen.sample_subset(u, 1, seed=3)
        b = envgen.sample_subset(u, 1, seed=3)
        assert a.pairs == b.pairs

    def test_mobile_regime_distinct(self):
        u = envgen.build_universe(32, 128)
        spec = envgen.sample_subset(u, 128, seed=1)
        assert len(set(spec.pairs)) == 128
        assert all(1 <= l <= 32 and 1 <= m <= 128 for l, m in spec.pairs)

    def test_out_of_range(self):
        u = envgen.build_universe(2, 2)
        with pytest.raises(ValueError):
            envgen.sample_subset(u, 5, seed=0)
        with pytest.raises(ValueError):
            envgen.sample_subset(u, 0, seed=0)


class TestGeneration:
    def test_empty(self):
        env = sm1_env()
        spec = envgen.sample_subset(envgen.build_universe(2, 2), 2, seed=0)
        assert envgen.generate_samples(env, spec, 0, seed=0) == []

    def test_forced_pair(self):
        env = sm1_env()
        spec = envgen.sample_subset(envgen.build_universe(4, 4), 1, seed=5)
        samples = envgen.generate_samples(env, spec, 20, seed=1)
        assert all(s.pair == spec.pairs[0] for s in samples)

    def test_reproducible_per_index(self):
        env = sm1_env()
        spec = envgen.sample_subset(envgen.build_universe(4, 4), 3, seed=5)
        a = envgen.generate_sample(env, spec, seed=9, index=7)
        b = envgen.generate_sample(env, spec, seed=9, index=7)
        assert a.pair == b.pair
        np.testing.assert_array_equal(a.gains.gains, b.gains.gains)

    def test_pair_coverage(self):
        env = sm1_env(n=4)
        spec = envgen.sample_subset(envgen.build_universe(4, 4), 8, seed=2)
        samples = envgen.generate_samples(env, spec, 400, seed=3)
        seen = {s.pair for s in samples}
        assert seen == set(spec.pairs)

    def test_shapes(self):
        env = envgen.EnvConfig(network=NetworkConfig(num_bs=2, num_users=4,
                                                     num_subcarriers=8),
                               path_loss="normalized")
        spec = envgen.sample_subset(envgen.build_universe(4, 8), 4, seed=0)
        s = envgen.generate_sample(env, spec, seed=0, index=0)
        assert s.gains.gains.shape == (2, 4, 8)
        assert s.adjacency.shape == (2, 4)
        assert np.all(s.adjacency.sum(axis=0) == 1)


class TestLabeling:
    def test_waterfill_budget_exhausted(self):
        env = sm1_env(n=8)
        spec = envgen.sample_subset(envgen.build_universe(4, 8), 2, seed=0)
        samples = envgen.generate_samples(env, spec, 10, seed=1)
        elapsed = envgen.label_dataset(samples, "waterfill", env.network)
        assert elapsed > 0
        for s in samples:
            assert s.label_ok
            assert abs(s.label_power.sum() - env.network.p_max) < 1e-9

    def test_greedy_partition(self):
        env = envgen.EnvConfig(network=NetworkConfig(num_bs=1, num_users=4,
                                                     num_subcarriers=32))
        spec = envgen.sample_subset(envgen.build_universe(4, 8), 2, seed=0)
        samples = envgen.generate_samples(env, spec, 5, seed=2)
        envgen.label_dataset(samples, "greedy+waterfill", env.network)
        for s in samples:
            assert s.label_assignment.shape == (32,)
            assert np.all((s.label_assignment >= 0) & (s.label_assignment < 4))
            # power lives only on the assigned user of each subcarrier
            for n in range(32):
                u = s.label_assignment[n]
                others = np.delete(s.label_power[0, :, n], u)
                assert np.all(others == 0)

    def test_random_feasible(self):
        env = envgen.EnvConfig(network=NetworkConfig(num_bs=2, num_users=4,
                                                     num_subcarriers=4))
        spec = envgen.sample_subset(envgen.build_universe(2, 4), 2, seed=0)
        samples = envgen.generate_samples(env, spec, 8, seed=3)
        envgen.label_dataset(samples, "random", env.network)
        for s in samples:
            assert s.label_ok
            assert np.all(s.label_power.sum(axis=(1, 2)) <= env.network.p_max + 1e-9)

    def test_wmmse_square_single_carrier(self):
        env = envgen.EnvConfig(network=NetworkConfig(num_bs=3, num_users=3,
                                                     num_subcarriers=1))
        spec = envgen.sample_subset(envgen.build_universe(1, 16), 4, seed=0)
        samples = envgen.generate_samples(env, spec, 4, seed=4)
        envgen.label_dataset(samples, "wmmse", env.network)
        for s in samples:
            assert s.label_ok
            diag = s.label_power[np.arange(3), np.arange(3), 0]
            assert np.all(diag >= 0) and np.all(diag <= env.network.p_max + 1e-9)
            off = s.label_power.sum() - diag.sum()
            assert off == 0

    def test_unknown_labeler(self):
        with pytest.raises(ValueError):
            envgen.label_dataset([], "magic", NetworkConfig())

    def test_mismatched_labeler_raises(self):
        env = envgen.EnvConfig(network=NetworkConfig(num_bs=2, num_users=2,
                                                     num_subcarriers=4))
        spec = envgen.sample_subset(envgen.build_universe(2, 4), 2, seed=0)
        samples = envgen.generate_samples(env, spec, 2, seed=5)
        with pytest.raises(envgen.LabelerMismatch):
            envgen.label_dataset(samples, "waterfill", env.network)

    def test_iterative_sm3_labels(self):
        env = envgen.EnvConfig(network=NetworkConfig(num_bs=2, num_users=4,
                                                     num_subcarriers=4, p_max=50.0),
                               path_loss="normalized")
        spec = envgen.sample_subset(envgen.build_universe(4, 8), 2, seed=0)
        samples = envgen.generate_samples(env, spec, 2, seed=6)
        envgen.label_dataset(samples, "iterative-sm3", env.network)
        for s in samples:
            assert s.label_ok
            assert np.all(s.label_power.sum(axis=(1, 2)) <= 50.0 * (1 + 1e-6))


class TestSplitAndPersistence:
    def make_labeled(self, count=20, n=4):
        env = sm1_env(n=n)
        universe = envgen.build_universe(4, 4)
        spec = envgen.sample_subset(universe, 3, seed=0)
        samples = envgen.generate_samples(env, spec, count, seed=7)
        envgen.label_dataset(samples, "waterfill", env.network)
        manifest = envgen.make_manifest(env, universe, spec, (4, 4, 12),
                                        "waterfill", 7, count)
        return env, universe, spec, samples, manifest

    def test_split_contiguous_disjoint(self):
        _, _, _, samples, _ = self.make_labeled()
        train, val, test = envgen.split(samples, (4, 4, 12))
        assert [s.index for s in train] == list(range(4))
        assert [s.index for s in val] == list(range(4, 8))
        assert [s.index for s in test] == list(range(8, 20))

    def test_split_too_large(self):
        _, _, _, samples, _ = self.make_labeled()
        with pytest.raises(ValueError):
            envgen.split(samples, (10, 10, 10))

    def test_default_split_ratio(self):
        assert envgen.default_split_counts(100000) == (20000, 20000, 60000)

    def test_round_trip_manifest_hash(self, tmp_path):
        _, _, _, samples, manifest = self.make_labeled()
        envgen.save_dataset(tmp_path / "d", samples, manifest)
        loaded, manifest2 = envgen.load_dataset(tmp_path / "d")
        assert envgen.manifest_hash(manifest) == envgen.manifest_hash(manifest2)

    def test_round_trip_bit_exact(self, tmp_path):
        _, _, _, samples, manifest = self.make_labeled()
        envgen.save_dataset(tmp_path / "d", samples, manifest)
        loaded, _ = envgen.load_dataset(tmp_path / "d")
        assert len(loaded) == len(samples)
        for a, b in zip(samples, loaded):
            assert a.pair == b.pair
            np.testing.assert_array_equal(a.gains.gains, b.gains.gains)
            np.testing.assert_array_equal(a.label_power, b.label_power)

    def test_byte_identical_regeneration(self, tmp_path):
        for name in ("a", "b"):
            _, _, _, samples, manifest = self.make_labeled()
            envgen.save_dataset(tmp_path / name, samples, manifest)
        a = (tmp_path / "a" / "samples.ndjson").read_bytes()
        b = (tmp_path / "b" / "samples.ndjson").read_bytes()
        assert a == b

    def test_malformed_line_reports_lineno(self, tmp_path):
        _, _, _, samples, manifest = self.make_labeled(count=3)
        envgen.save_dataset(tmp_path / "d", samples, manifest)
        path = tmp_path / "d" / "samples.ndjson"
        lines = path.read_text().splitlines()
        lines[1] = lines[1][:-5] + "}}}"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="line 2"):
            envgen.load_dataset(tmp_path / "d")

    def test_parallel_labeling_matches_serial(self):
        env = sm1_env(n=4)
        spec = envgen.sample_subset(envgen.build_universe(2, 4), 2, seed=0)
        serial = envgen.generate_samples(env, spec, 12, seed=8)
        parallel = envgen.generate_samples(env, spec, 12, seed=8)
        envgen.label_dataset(serial, "waterfill", env.network, jobs=1)
        envgen.label_dataset(parallel, "waterfill", env.network, jobs=2)
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a.label_power, b.label_power)
