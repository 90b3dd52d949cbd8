import json
import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_orthogonal, random_orthonormal
from nadmd import dmd
from nadmd import systems as SY
from nadmd.errors import (
    ChecksumError,
    RankDeficiencyError,
    RankInfeasibleError,
    StoreFormatError,
    TrainingError,
)
from nadmd.observables import ObservableSpec, lift
from nadmd.signals import LocalBasis, cartesian_grid

ID1 = ObservableSpec("identity", 1)


def make_ts(s_in, s_out, grid=None, dt=0.1):
    s_in = np.asarray(s_in, dtype=float)
    grid = grid or cartesian_grid([[0, 1]] * 1, s_in.shape[0] if s_in.shape[0] > 1 else 2)
    return SY.TrainingSet(system="test", grid=grid, dt=dt, bases=(LocalBasis(1, dt),),
                          n_snap=s_in.shape[1], seed=0, substeps=1, s_in=s_in,
                          s_out=np.asarray(s_out, dtype=float))


class TestFitLocal:
    def test_single_pair(self):
        rom = dmd.fit_local([[1.0]], [[0.9]], ID1, 1)
        np.testing.assert_array_equal(rom.V, [[1.0]])
        np.testing.assert_allclose(rom.K, [[0.9]], rtol=1e-15)

    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
    def test_exact_linear_data(self, seed, n):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((n, n))
        Y1 = rng.standard_normal((n, n)) + 3 * np.eye(n)
        rom = dmd.fit_local(Y1.T, (A @ Y1).T, ObservableSpec("identity", n), n)
        assert np.linalg.norm(rom.full_operator() - A) <= 1e-10 * max(1, np.linalg.norm(A))

    def test_affine_dictionary_recovers_decay(self):
        # dS/dt = -S: one step multiplies by exp(-dt); [S, 1] makes it linear
        spec = ObservableSpec("identity", 1, constant=True)
        s_in = np.array([[-1.3], [0.7]])
        rom = dmd.fit_local(s_in, math.exp(-0.1) * s_in, spec, 2)
        for s in (-2.0, 0.3, 1.9):
            y = rom.full_operator() @ lift([s], spec)
            assert y[0] == pytest.approx(0.904837418 * s, rel=1e-9)

    def test_orthonormal_and_sign_convention(self, rng):
        spec = ObservableSpec("monomials", 2, 3)
        s_in = rng.uniform(0, 5, (9, 2))
        s_out = rng.uniform(0, 5, (9, 2))
        a = dmd.fit_local(s_in, s_out, spec, 9)
        b = dmd.fit_local(s_in.copy(), s_out.copy(), spec, 9)
        np.testing.assert_array_equal(a.V, b.V)
        np.testing.assert_array_equal(a.K, b.K)
        assert np.linalg.norm(a.V.T @ a.V - np.eye(9)) <= 1e-10
        lead = a.V[np.argmax(np.abs(a.V), axis=0), np.arange(9)]
        assert np.all(lead > 0)

    def test_rank_deficiency_names_point(self):
        s = np.array([[1.0], [1.0]])
        with pytest.raises(RankDeficiencyError, match="grid point 17") as info:
            dmd.fit_local(s, 0.5 * s, ObservableSpec("monomials", 1, 2), 2, index=17)
        assert info.value.point == 17

    def test_rank_above_minimum(self):
        with pytest.raises(RankInfeasibleError):
            dmd.fit_local([[1.0], [2.0]], [[1.0], [2.0]], ID1, 2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dmd.fit_local([[1.0], [2.0]], [[1.0]], ID1, 1)

    @given(seed=st.integers(0, 2**32 - 1))
    def test_truncation_optimal(self, seed):
        # Eckart-Young: no random rank-r matrix approximates Y1 better
        rng = np.random.default_rng(seed)
        spec = ObservableSpec("identity", 6)
        s_in = rng.standard_normal((8, 6))
        r = 3
        rom = dmd.fit_local(s_in, s_in, spec, r)
        Y1 = s_in.T
        best = np.linalg.norm(Y1 - rom.V @ (rom.V.T @ Y1))
        for _ in range(20):
            B = rng.standard_normal((6, r)) @ rng.standard_normal((r, 8))
            assert best <= np.linalg.norm(Y1 - B) + 1e-12

    def test_residual_is_least_squares_and_monotone(self, rng):
        spec = ObservableSpec("monomials", 2, 2)
        s_in = rng.uniform(-1, 1, (7, 2))
        s_out = np.tanh(s_in @ np.array([[0.9, 0.2], [-0.3, 0.8]]))
        Y1, Y2 = lift(s_in, spec).T, lift(s_out, spec).T
        res = []
        for r in range(1, 6):
            rom = dmd.fit_local(s_in, s_out, spec, r)
            got = np.linalg.norm(rom.full_operator() @ Y1 - Y2)
            # oracle: min_K ||V K V^T Y1 - Y2|| as a vectorized least-squares problem
            X = rom.V.T @ Y1
            A = np.kron(X.T, rom.V)
            k, *_ = np.linalg.lstsq(A, Y2.ravel(order="F"), rcond=None)
            want = np.linalg.norm(A @ k - Y2.ravel(order="F"))
            assert got == pytest.approx(want, rel=1e-9, abs=1e-12)
            res.append(got)
        assert all(a >= b - 1e-12 for a, b in zip(res, res[1:]))


class TestChooseRank:
    def test_fixed(self):
        assert dmd.choose_rank([np.array([2.0, 1.0])] * 3, dmd.RankPolicy.fixed(2)) == 2

    def test_energy_drops_floor(self):
        svs = [np.array([1.0, 1e-16])] * 4
        assert dmd.choose_rank(svs, dmd.RankPolicy()) == 1

    def test_energy_takes_worst_point(self):
        svs = [np.array([1.0, 1e-3, 1e-9]), np.array([1.0, 0.5, 0.1])]
        assert dmd.choose_rank(svs, dmd.RankPolicy.energy(0.99)) == 2
        assert dmd.choose_rank(svs, dmd.RankPolicy.energy(1.0)) == 3

    def test_fixed_infeasible_lists_points(self):
        svs = [np.array([1.0, 0.5]), np.array([1.0, 1e-14]), np.array([1.0])]
        with pytest.raises(RankInfeasibleError) as info:
            dmd.choose_rank(svs, dmd.RankPolicy.fixed(2))
        assert info.value.points == [1, 2]

    @pytest.mark.parametrize("args", [("fixed", 0), ("fixed", 1.5), ("energy", 0.0),
                                      ("energy", 1.2), ("bogus", 1)])
    def test_invalid_policy(self, args):
        with pytest.raises(ValueError):
            dmd.RankPolicy(*args)


class TestGram:
    def test_examples(self, rng):
        V = random_orthonormal(rng, 6, 3)
        np.testing.assert_allclose(dmd.gram(V, V), np.eye(3), atol=1e-14)
        R = random_orthogonal(rng, 3)
        np.testing.assert_allclose(dmd.gram(V, V @ R), R, atol=1e-14)
        Va, Vb = np.eye(6)[:, :3], np.eye(6)[:, 3:]
        np.testing.assert_array_equal(dmd.gram(Va, Vb), np.zeros((3, 3)))
        with pytest.raises(ValueError):
            dmd.gram(np.eye(3), np.eye(4))


@pytest.fixture(scope="module")
def pp_ts():
    sy = SY.builtin_predator_prey()
    return SY.generate_training_set(sy, cartesian_grid(sy.param_bounds, 3), 9, 0.1, seed=0)


class TestTrain:
    def test_linear_scalar_counts(self):
        sy = SY.builtin_linear_scalar()
        ts = SY.generate_training_set(sy, cartesian_grid(sy.param_bounds, 3), 2, 0.1)
        store = dmd.train(ts, ObservableSpec("monomials", 1, 2))
        assert len(store) == 729 and store.rank <= 2
        assert store.V.shape == (729, 2, store.rank)

    def test_forced_oscillator_identity(self):
        sy = SY.builtin_forced_oscillator()
        ts = SY.generate_training_set(sy, cartesian_grid(sy.param_bounds, 3), 3, 0.1)
        store = dmd.train(ts, ObservableSpec("identity", 2))
        assert len(store) == 729
        assert np.max(np.linalg.norm(
            np.swapaxes(store.V, 1, 2) @ store.V - np.eye(store.rank), axis=(1, 2))) <= 1e-10

    def test_energy_rank_recorded(self, pp_ts, tmp_path):
        store = dmd.train(pp_ts, ObservableSpec("monomials", 2, 3))
        dmd.save(store, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["rank"] == store.rank == dmd.choose_rank(store.singular_values,
                                                                 dmd.RankPolicy())
        assert manifest["provenance"]["rank_policy"] == {"policy": "energy",
                                                         "value": 1 - 1e-10}

    def test_residuals_match_local_fits(self, pp_ts):
        spec = ObservableSpec("monomials", 2, 3)
        store = dmd.train(pp_ts, spec, dmd.RankPolicy.fixed(6))
        res = dmd.training_residuals(store, pp_ts)
        m = 11
        rom = dmd.fit_local(*pp_ts.pairs(m), spec, 6)
        Y1, Y2 = lift(pp_ts.s_in[m], spec).T, lift(pp_ts.s_out[m], spec).T
        want = np.linalg.norm(rom.full_operator() @ Y1 - Y2) / np.linalg.norm(Y2)
        assert res[m] == pytest.approx(want, rel=1e-12)

    def test_empty(self):
        ts = make_ts(np.zeros((2, 0, 1)), np.zeros((2, 0, 1)))
        with pytest.raises(ValueError, match="empty"):
            dmd.train(ts, ID1)

    def test_infeasible_rank_lists_points(self):
        s_in = np.array([[[1.0], [2.0]], [[1.0], [1.0]], [[3.0], [3.0]]])
        ts = make_ts(s_in, 0.5 * s_in, grid=cartesian_grid([[0, 1]], 3))
        with pytest.raises(RankInfeasibleError) as info:
            dmd.train(ts, ObservableSpec("monomials", 1, 2), dmd.RankPolicy.fixed(2))
        assert info.value.points == [1, 2]

    def test_failures_aggregated(self, monkeypatch):
        s_in = np.array([[[1.0], [2.0]]] * 3)
        ts = make_ts(s_in, 0.5 * s_in, grid=cartesian_grid([[0, 1]], 3))
        real = dmd.fit_local

        def flaky(*a, index=None, **kw):
            if index in (0, 2):
                raise RankDeficiencyError(f"grid point {index}", point=index)
            return real(*a, index=index, **kw)

        monkeypatch.setattr(dmd, "fit_local", flaky)
        with pytest.raises(TrainingError) as info:
            dmd.train(ts, ObservableSpec("monomials", 1, 2), dmd.RankPolicy.fixed(1))
        assert [m for m, _ in info.value.failures] == [0, 2]

    def test_state_dim_mismatch(self, pp_ts):
        with pytest.raises(ValueError, match="state_dim"):
            dmd.train(pp_ts, ObservableSpec("identity", 3))


class TestPersistence:
    def test_roundtrip_byte_identical(self, pp_ts, tmp_path):
        store = dmd.train(pp_ts, ObservableSpec("monomials", 2, 3))
        dmd.save(store, tmp_path / "a")
        back = dmd.load(tmp_path / "a")
        np.testing.assert_array_equal(back.V, store.V)
        np.testing.assert_array_equal(back.K, store.K)
        assert back.observable == store.observable and back.rank == store.rank
        dmd.save(back, tmp_path / "b")
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()

    def test_truncated_file(self, pp_ts, tmp_path):
        dmd.save(dmd.train(pp_ts, ObservableSpec("monomials", 2, 3)), tmp_path)
        f = tmp_path / "rom_4.bin"
        f.write_bytes(f.read_bytes()[:-3])
        with pytest.raises(ChecksumError):
            dmd.load(tmp_path)

    def test_version_mismatch(self, pp_ts, tmp_path):
        dmd.save(dmd.train(pp_ts, ObservableSpec("monomials", 2, 3)), tmp_path)
        man = json.loads((tmp_path / "manifest.json").read_text())
        man["version"] = 99
        (tmp_path / "manifest.json").write_text(json.dumps(man))
        with pytest.raises(StoreFormatError, match="version 99"):
            dmd.load(tmp_path)

    def test_not_a_store(self, tmp_path):
        with pytest.raises(StoreFormatError):
            dmd.load(tmp_path)

    def test_binary_layout(self, pp_ts, tmp_path):
        store = dmd.train(pp_ts, ObservableSpec("monomials", 2, 3), dmd.RankPolicy.fixed(4))
        dmd.save(store, tmp_path)
        raw = (tmp_path / "rom_0.bin").read_bytes()
        ndim, = np.frombuffer(raw[:8], "<u8")
        shape = np.frombuffer(raw[8:8 + 8 * ndim], "<u8")
        assert ndim == 2 and shape.tolist() == [9, 4]
        V = np.frombuffer(raw[8 + 8 * ndim: 8 + 8 * ndim + 8 * 36], "<f8").reshape(9, 4)
        np.testing.assert_array_equal(V, store.V[0])

    def test_large_store_loads_quickly(self, tmp_path):
        grid = cartesian_grid([[0, 1]] * 5 + [[0, 3], [0.05, 0.5]], 3)
        rng = np.random.default_rng(0)
        M = len(grid)
        V = np.linalg.qr(rng.standard_normal((M, 20, 20)))[0]
        store = dmd.ModelStore(observable=ObservableSpec("identity", 20), grid=grid, dt=0.1,
                               nodes=(5, 1, 1), rank=20, V=V, K=rng.standard_normal((M, 20, 20)),
                               singular_values=np.ones((M, 20)))
        dmd.save(store, tmp_path)
        t = time.perf_counter()
        back = dmd.load(tmp_path)
        assert time.perf_counter() - t < 1.0
        assert len(back) == 2187
