import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm, subspace_angles

from conftest import random_orthogonal, random_orthonormal
from nadmd import dmd, online
from nadmd import signals as SG
from nadmd import systems as SY
from nadmd.errors import ExtrapolationError
from nadmd.manifold import InterpolantSpec, stencil_weights
from nadmd.observables import ObservableSpec, lift
from nadmd.signals import cartesian_grid


def synthetic_store(V, K, bounds=((-1.0, 1.0),), ppd=3, dt=0.1, constant=False):
    V, K = np.asarray(V, dtype=float), np.asarray(K, dtype=float)
    n = V.shape[1] - int(constant)
    grid = cartesian_grid(bounds, ppd)
    return dmd.ModelStore(observable=ObservableSpec("identity", n, constant=constant),
                          grid=grid, dt=dt, nodes=(1,) * len(bounds), rank=V.shape[2],
                          V=V, K=K, singular_values=np.ones(V.shape[:2]))


def random_store(seed, N=5, r=3, M=3, spread=0.2):
    rng = np.random.default_rng(seed)
    V0 = random_orthonormal(rng, N, r)
    V = np.stack([np.linalg.qr(V0 + spread * rng.standard_normal((N, r)))[0] for _ in range(M)])
    K = np.stack([np.eye(r) * 0.9 + 0.05 * rng.standard_normal((r, r)) for _ in range(M)])
    return synthetic_store(V, K)


class TestAlign:
    def test_identical_bases_change_nothing(self, rng):
        V0 = random_orthonormal(rng, 4, 2)
        K = rng.standard_normal((3, 2, 2))
        al = online.align_roms(synthetic_store(np.stack([V0] * 3), K))
        np.testing.assert_allclose(al.rotations, np.broadcast_to(np.eye(2), (3, 2, 2)),
                                   atol=1e-12)
        np.testing.assert_allclose(al.operators, K, atol=1e-12)

    def test_rotated_basis_same_operator(self, rng):
        # V_m = V0 R with K_m = R^T K0 R is the same full operator in other coordinates
        V0 = random_orthonormal(rng, 6, 3)
        K0 = rng.standard_normal((3, 3))
        R = random_orthogonal(rng, 3)
        store = synthetic_store(np.stack([V0 @ R, V0, V0 @ R.T]),
                                np.stack([R.T @ K0 @ R, K0, R @ K0 @ R.T]))
        al = online.align_roms(store)
        assert al.ref_index == 1
        for m in range(3):
            np.testing.assert_allclose(al.operators[m], K0, atol=1e-12)

    @given(seed=st.integers(0, 2**32 - 1))
    def test_spectrum_preserved(self, seed):
        store = random_store(seed)
        al = online.align_roms(store)
        for m in range(3):
            S = al.rotations[m]
            assert np.linalg.norm(S.T @ S - np.eye(3)) <= 1e-10
            np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(al.operators[m])),
                                       np.sort_complex(np.linalg.eigvals(store.K[m])),
                                       atol=1e-10)

    def test_explicit_reference(self):
        store = random_store(3)
        assert online.align_roms(store, 0).ref_index == 0
        with pytest.raises(ValueError):
            online.align_roms(store, 7)


class TestInterpolateAtNodes:
    @given(seed=st.integers(0, 2**32 - 1))
    def test_rob_reproduces_node(self, seed):
        store = random_store(seed)
        for m, p in enumerate(store.grid.points):
            V = online.interpolate_rob(store, None, p)
            assert np.max(subspace_angles(V, store.V[m])) <= 1e-8

    @given(seed=st.integers(0, 2**32 - 1))
    def test_rom_reproduces_node(self, seed):
        store = random_store(seed)
        al = online.align_roms(store)
        for m, p in enumerate(store.grid.points):
            K = online.interpolate_rom(al, p)
            assert np.linalg.norm(K - al.operators[m]) <= 1e-9 * np.linalg.norm(al.operators[m])

    @given(seed=st.integers(0, 2**32 - 1), x=st.floats(-1, 1))
    def test_interpolated_basis_orthonormal(self, seed, x):
        store = random_store(seed)
        V = online.interpolate_rob(store, None, [x])
        assert np.linalg.norm(V.T @ V - np.eye(3)) <= 1e-10


class TestCommutingFamily:
    def test_exp_family_exact(self, rng):
        # log(K_m K0^{-1}) = p_m B is linear in p, so interpolation is exact
        r = 3
        B = 0.3 * rng.standard_normal((r, r))
        K0 = np.eye(r) + 0.1 * rng.standard_normal((r, r))
        V0 = random_orthonormal(rng, 5, r)
        ps = np.array([-1.0, 0.0, 1.0])
        store = synthetic_store(np.stack([V0] * 3), np.stack([expm(p * B) @ K0 for p in ps]))
        al = online.align_roms(store)
        for p in (-0.73, -0.2, 0.41, 0.95):
            K = online.interpolate_rom(al, [p])
            np.testing.assert_allclose(K, expm(p * B) @ K0, atol=1e-12)

    def test_entrywise_is_weighted_sum(self, rng):
        store = random_store(11)
        al = online.align_roms(store)
        spec = InterpolantSpec(operator="entrywise")
        w = stencil_weights(store.grid.axes, [0.3], spec)
        K, info = online.interpolate_rom(al, [0.3], spec, return_info=True)
        np.testing.assert_allclose(K, np.tensordot(w, al.operators, axes=(0, 0)), atol=1e-14)
        assert info == {"fallback": False, "stencil": 3}
        pred = online.Predictor(store, spec=spec)
        assert pred.logs is None and pred.failed == []


@pytest.fixture(scope="module")
def scalar_store():
    sy = SY.builtin_linear_scalar()
    ts = SY.generate_training_set(sy, cartesian_grid(sy.param_bounds, 3), 2, 0.1, seed=0)
    return dmd.train(ts, ObservableSpec("identity", 1, constant=True))


class TestPredict:
    def test_nodal_inputs_follow_local_map(self, scalar_store):
        # constant alpha = 5, beta = 0 parameterizes to a grid node
        sig = [SG.constant(5.0), SG.constant(0.0)]
        p = np.array([5.0, 5.0, 5.0, 0.0, 0.0, 0.0])
        m = int(np.flatnonzero(np.all(scalar_store.grid.points == p, axis=1))[0])
        A = scalar_store.local_rom(m).full_operator()
        traj = online.predict(scalar_store, [1.5], sig, 1.0)
        s = np.array([1.5])
        for k in range(1, len(traj.times)):
            s = (A @ lift(s, scalar_store.observable))[:1]
            assert traj.states[k, 0] == pytest.approx(s[0], abs=1e-8)
        np.testing.assert_allclose(traj.params, np.broadcast_to(p, traj.params.shape))

    def test_node_step_matches_exact_decay(self, scalar_store):
        traj = online.predict(scalar_store, [1.0], [SG.constant(5.0), SG.constant(0.0)], 0.1)
        assert traj.states[-1, 0] == pytest.approx(np.exp(-0.5), rel=1e-8)

    def test_static_system_holds_state(self):
        V = np.stack([np.eye(2)] * 3)
        K = np.stack([np.eye(2)] * 3)
        store = synthetic_store(V, K)
        traj = online.predict(store, [0.3, -1.2], [SG.sin_affine(0.5, 2.0)], 5.0)
        assert len(traj.times) == 51
        np.testing.assert_allclose(traj.states, np.broadcast_to([0.3, -1.2], (51, 2)),
                                   atol=1e-14)
        assert not traj.diverged

    def test_deterministic(self, scalar_store):
        sig = [SG.sin_affine(1.0, 4.0), SG.cos_power(1.0, 0.001, 2.0)]
        a = online.predict(scalar_store, [2.0], sig, 2.0)
        b = online.predict(scalar_store, [2.0], sig, 2.0)
        np.testing.assert_array_equal(a.states, b.states)
        assert a.diagnostics == b.diagnostics

    def test_extrapolation_reports_point(self, scalar_store):
        with pytest.raises(ExtrapolationError, match="step 0") as info:
            online.predict(scalar_store, [1.0], [SG.constant(7.0), SG.constant(0.0)], 1.0)
        np.testing.assert_allclose(info.value.point[:3], 7.0)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_recorded(self, tmp_path):
        V = np.stack([np.eye(1)] * 3)
        store = synthetic_store(V, np.full((3, 1, 1), 1e3), dt=1.0)
        traj = online.predict(store, [1.0], [SG.constant(0.0)], 500.0)
        assert traj.diverged and traj.divergence["k"] == 102
        assert len(traj.states) == 103 and np.all(np.isfinite(traj.states))
        traj.write_diagnostics(tmp_path / "d.jsonl")
        assert '"divergence"' in (tmp_path / "d.jsonl").read_text().splitlines()[-1]

    def test_channel_count_checked(self, scalar_store):
        with pytest.raises(ValueError, match="input channels"):
            online.predict(scalar_store, [1.0], [SG.constant(0.0)], 1.0)

    def test_state_box_flag(self, scalar_store):
        traj = online.predict(scalar_store, [1.0], [SG.constant(-5.0), SG.constant(0.0)], 0.3)
        flags = [d["outside_state_box"] for d in traj.diagnostics]
        assert flags == [False, True, True]


class TestEvaluate:
    def test_zero_error(self):
        t = np.linspace(0, 1, 11)
        s = np.sin(t)[:, None]
        rep = online.evaluate(online.PredictionTrajectory(t, s, np.zeros((10, 1))), t, s)
        assert rep.max_abs == 0 and rep.rel_l2 == 0

    def test_constant_offset(self):
        t = np.linspace(0, 1, 11)
        ref = np.stack([np.cos(t) + 2, np.sin(t)], axis=1)
        delta = 0.125
        rep = online.evaluate(online.PredictionTrajectory(t, ref + delta, None), t, ref)
        assert rep.max_abs == pytest.approx(delta, rel=1e-14)
        np.testing.assert_allclose(rep.abs_error, delta, rtol=1e-12)
        assert rep.rel_l2 == pytest.approx(delta * np.sqrt(ref.size) / np.linalg.norm(ref))

    def test_mismatch(self):
        t = np.linspace(0, 1, 11)
        with pytest.raises(ValueError):
            online.evaluate(online.PredictionTrajectory(t, np.zeros((11, 1)), None),
                            t[:-1], np.zeros((10, 1)))

    def test_csv_columns(self, tmp_path):
        t = np.linspace(0, 1, 3)
        traj = online.PredictionTrajectory(t, np.ones((3, 2)), None)
        traj.to_csv(tmp_path / "a.csv", reference=np.zeros((3, 2)))
        head = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert head == "t,S_1,S_2,ref_1,ref_2,abserr_1,abserr_2"
