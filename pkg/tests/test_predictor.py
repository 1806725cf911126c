import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import null_space

from fcsdpc.checks import check_implicit_predictor, noisy_dataset
from fcsdpc.data import DataMatrix, NoiseSpec, add_output_noise, build_hankel, collect_until_exciting
from fcsdpc.experiment import control_set_of, plant_of
from fcsdpc.predictor import (ConditioningError, RegularizerKind, RegWeights, SpcPredictor,
                              dpc_inner_oracle, export_json, fit_spc, h_star, h_star_oracle,
                              implicit_predictor, projection_matrix, reg_weights)

KINDS = list(RegularizerKind)


def from_rows(S, m, p, N_p, N_f):
    """DataMatrix whose stacked ``[Wp; Uf; Yf]`` equals ``S``."""
    a, b, c = m * N_p, p * N_p, m * N_f
    ell = S.shape[1]
    return DataMatrix(Up=S[:a], Yp=S[a:a + b], Uf=S[a + b:a + b + c], Yf=S[a + b + c:],
                      y_now=np.zeros((p, ell)), u_tail=np.zeros((m, ell)),
                      N_p=N_p, N_f=N_f, m=m, p=p)


def random_inputs(rng, D):
    return (rng.standard_normal(D.Wp.shape[0]), rng.standard_normal(D.Uf.shape[0]),
            rng.standard_normal(D.Yf.shape[0]))


class TestProjection:
    def test_orthonormal_rows(self, rng):
        Qm, _ = np.linalg.qr(rng.standard_normal((20, 20)))
        D = from_rows(Qm[:, :8].T, 1, 1, 2, 2)  # M = first 6 orthonormal rows
        M = D.M
        np.testing.assert_allclose(projection_matrix(D), M.T @ M, atol=1e-12)

    def test_projector_properties(self, noisy_D):
        Pi = projection_matrix(noisy_D)
        M = noisy_D.M
        assert np.trace(Pi) == pytest.approx(M.shape[0], abs=1e-8)
        assert np.max(np.abs(Pi @ Pi - Pi)) <= 1e-10
        assert np.max(np.abs(Pi - Pi.T)) <= 1e-10
        assert np.max(np.abs(Pi @ M.T - M.T)) <= 1e-10 * max(1.0, np.abs(M).max())

    def test_range_and_kernel(self, noisy_D, rng):
        Pi, M = projection_matrix(noisy_D), noisy_D.M
        v = M.T @ rng.standard_normal(M.shape[0])
        w = null_space(M) @ rng.standard_normal(noisy_D.ell - M.shape[0])
        np.testing.assert_allclose(Pi @ v, v, atol=1e-9 * np.linalg.norm(v))
        np.testing.assert_allclose(Pi @ w, 0.0, atol=1e-9 * np.linalg.norm(w))

    def test_singular_gram_rejected(self, noisy_D):
        Up = noisy_D.Up.copy()
        Up[1] = Up[0]
        with pytest.raises(ConditioningError, match="condition number"):
            projection_matrix(replace(noisy_D, Up=Up))


class TestFitSpc:
    def test_zero_outputs(self, noisy_D):
        spc = fit_spc(replace(noisy_D, Yf=np.zeros_like(noisy_D.Yf)))
        assert not spc.O_spc.any() and not spc.T_spc.any()

    def test_block_split(self, noisy_D):
        spc = fit_spc(noisy_D)
        assert spc.O_spc.shape == (noisy_D.Yf.shape[0], noisy_D.Wp.shape[0])
        assert spc.T_spc.shape == (noisy_D.Yf.shape[0], noisy_D.Uf.shape[0])
        K = noisy_D.Yf @ np.linalg.pinv(noisy_D.M)
        np.testing.assert_allclose(np.hstack([spc.O_spc, spc.T_spc]), K, atol=1e-9)

    def test_column_duplication(self, noisy_D):
        dup = DataMatrix(**{k: np.hstack([v, v]) if isinstance(v, np.ndarray) else v
                            for k, v in noisy_D.__dict__.items()})
        a, b = fit_spc(noisy_D), fit_spc(dup)
        np.testing.assert_allclose(b.O_spc, a.O_spc, atol=1e-9)
        np.testing.assert_allclose(b.T_spc, a.T_spc, atol=1e-9)

    def test_rank_deficiency_rejected(self, noisy_D):
        Uf = noisy_D.Uf.copy()
        Uf[-1] = 0.0
        with pytest.raises(ValueError, match="rank"):
            fit_spc(replace(noisy_D, Uf=Uf))

    def test_exact_data_matches_model(self, rng):
        # n = p N_p keeps [Wp; Uf] full row rank on noise-free data
        from fcsdpc.checks import check_exact_data
        res = check_exact_data(int(rng.integers(1000)), count=20)
        assert res.passed, res.detail


class TestRegWeights:
    def test_q_reg(self, noisy_D):
        w = reg_weights(noisy_D)
        resid = noisy_D.Yf @ (np.eye(noisy_D.ell) - w.Pi) @ noisy_D.Yf.T
        assert np.all(np.linalg.eigvalsh(w.Q_reg) > 0)
        assert np.max(np.abs(w.Q_reg @ resid - np.eye(len(resid)))) <= 1e-8
        assert np.max(np.abs(w.Q_reg - w.Q_reg.T)) <= 1e-12
        assert np.max(np.abs(w.R_reg - w.R_reg.T)) <= 1e-12

    def test_cached_parts(self, noisy_D):
        w = reg_weights(noisy_D)
        Wp = noisy_D.Wp
        np.testing.assert_allclose(w.Wp_gram_inv @ (Wp @ Wp.T), np.eye(len(Wp)), atol=1e-8)
        np.testing.assert_allclose(w.Uf_Wp_pinv, noisy_D.Uf @ np.linalg.pinv(Wp), atol=1e-8)
        assert set(w.conditioning) == {"gram_M", "Yf_resid", "Uf_resid"}

    def test_conditioning_grows_with_snr(self, cfg):
        clean = collect_until_exciting(plant_of(cfg), control_set_of(cfg), 4, 2, 400, seed=0)
        conds = [reg_weights(build_hankel(add_output_noise(clean, NoiseSpec(snr, 5)), 4, 2))
                 .conditioning["gram_M"] for snr in (20, 40, 60)]
        assert conds[0] < conds[1] < conds[2]


class TestHStar:
    def test_zero_on_spc_prediction(self, noisy_D, rng):
        spc, w = fit_spc(noisy_D), reg_weights(noisy_D)
        xi, u_f, _ = random_inputs(rng, noisy_D)
        assert h_star(w, "projection", 10.0, xi, u_f, spc.predict(xi, u_f), spc) == 0.0

    def test_zero_inputs_two_norm(self, noisy_D):
        spc, w = fit_spc(noisy_D), reg_weights(noisy_D)
        z = [np.zeros(k) for k in (noisy_D.Wp.shape[0], noisy_D.Uf.shape[0], noisy_D.Yf.shape[0])]
        assert h_star(w, "two_norm", 3.0, *z, spc) == 0.0

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_oracle(self, noisy_D, rng, kind):
        spc, w = fit_spc(noisy_D), reg_weights(noisy_D)
        for _ in range(20):
            args = random_inputs(rng, noisy_D)
            assert h_star(w, kind, 7.0, *args, spc) == pytest.approx(
                h_star_oracle(noisy_D, kind, 7.0, *args), rel=1e-6)

    def test_kinds_differ_by_y_independent_terms(self, noisy_D, rng):
        spc, w = fit_spc(noisy_D), reg_weights(noisy_D)
        xi, u_f, _ = random_inputs(rng, noisy_D)
        diffs = []
        for _ in range(2):
            y_f = rng.standard_normal(noisy_D.Yf.shape[0])
            diffs.append(h_star(w, "two_norm", 2.0, xi, u_f, y_f, spc)
                         - h_star(w, "projection", 2.0, xi, u_f, y_f, spc))
        assert diffs[0] == pytest.approx(diffs[1], abs=1e-8)


class TestHStarOracle:
    @pytest.mark.parametrize("kind", KINDS)
    def test_zero(self, noisy_D, kind):
        z = [np.zeros(k) for k in (noisy_D.Wp.shape[0], noisy_D.Uf.shape[0], noisy_D.Yf.shape[0])]
        assert h_star_oracle(noisy_D, kind, 1.0, *z) == pytest.approx(0.0, abs=1e-20)

    def test_identity_stack(self, rng):
        D = from_rows(np.eye(8), 1, 1, 2, 2)
        args = random_inputs(rng, D)
        z = np.concatenate(args)
        assert h_star_oracle(D, "two_norm", 2.5, *args) == pytest.approx(2.5 * z @ z, rel=1e-12)

    def test_inconsistent_rejected(self, noisy_D, rng):
        Yf = noisy_D.Yf.copy()
        Yf[-1] = Yf[0]
        D = replace(noisy_D, Yf=Yf)
        xi, u_f, y_f = random_inputs(rng, D)
        y_f[-1] = y_f[0] + 1.0
        with pytest.raises(ValueError, match="inconsistent"):
            h_star_oracle(D, "two_norm", 1.0, xi, u_f, y_f)

    @pytest.mark.parametrize("kind", KINDS)
    def test_dominates_feasible_points(self, rng, kind):
        for _ in range(50):
            D = noisy_dataset(rng, 2, 1, 1, 2, 1, snr_db=20.0)
            S = D.stacked
            N = null_space(S)
            Pi = np.eye(D.ell) - null_space(D.M) @ null_space(D.M).T
            args = random_inputs(rng, D)
            a_p = np.linalg.lstsq(S, np.concatenate(args), rcond=None)[0]
            best = h_star_oracle(D, kind, 1.0, *args)
            for _ in range(100):
                a = a_p + N @ rng.standard_normal(N.shape[1])
                r = a - Pi @ a if kind is RegularizerKind.PROJECTION else a
                assert best <= float(r @ r) * (1 + 1e-9)


class TestImplicitPredictor:
    def test_zero_q_bar_is_spc(self, noisy_D, rng):
        spc, w = fit_spc(noisy_D), reg_weights(noisy_D)
        k = noisy_D.Yf.shape[0]
        pred = implicit_predictor(spc, w, np.zeros((k, k)), 5.0, rng.standard_normal(k))
        xi, u_f, _ = random_inputs(rng, noisy_D)
        assert not pred.g_dpc.any()
        np.testing.assert_allclose(pred.predict(xi, u_f), spc.predict(xi, u_f), atol=1e-12)

    def test_scalar_blend(self):
        spc = SpcPredictor(O_spc=np.zeros((1, 2)), T_spc=np.zeros((1, 1)))
        w = RegWeights(Q_reg=np.eye(1), R_reg=np.eye(1), Wp_gram_inv=np.eye(2),
                       Uf_Wp_pinv=np.zeros((1, 2)), Pi=np.eye(3), conditioning={})
        pred = implicit_predictor(spc, w, np.eye(1), 1.0, [2.0])
        assert pred.predict(np.zeros(2), np.zeros(1))[0] == pytest.approx(1.0)

    def test_reference_fixed_point(self, noisy_D, rng):
        spc, w = fit_spc(noisy_D), reg_weights(noisy_D)
        xi, u_f, _ = random_inputs(rng, noisy_D)
        y_ref = spc.predict(xi, u_f)
        Qb = np.diag(rng.uniform(0.5, 2, len(y_ref)))
        pred = implicit_predictor(spc, w, Qb, 3.0, y_ref)
        np.testing.assert_allclose(pred.predict(xi, u_f), y_ref, atol=1e-9)

    def test_deltas_and_offset(self, noisy_D, rng):
        spc, w = fit_spc(noisy_D), reg_weights(noisy_D)
        k = noisy_D.Yf.shape[0]
        y_ref = rng.standard_normal(k)
        pred = implicit_predictor(spc, w, np.eye(k), 2.0, y_ref)
        assert np.max(np.abs(pred.dO - (pred.O_dpc - spc.O_spc))) <= 1e-12
        assert np.max(np.abs(pred.dT - (pred.T_dpc - spc.T_spc))) <= 1e-12
        np.testing.assert_array_equal(pred.offset(y_ref), pred.g_dpc)

    def test_large_lambda_approaches_spc(self, noisy_D, rng):
        spc, w = fit_spc(noisy_D), reg_weights(noisy_D)
        k = noisy_D.Yf.shape[0]
        xi, u_f, y_ref = random_inputs(rng, noisy_D)
        gaps = [np.linalg.norm(implicit_predictor(spc, w, np.eye(k), lam, y_ref).predict(xi, u_f)
                               - spc.predict(xi, u_f)) for lam in (1e9, 1e12)]
        assert gaps[1] < gaps[0]

    def test_lambda_must_be_positive(self, noisy_D):
        k = noisy_D.Yf.shape[0]
        with pytest.raises(ValueError):
            implicit_predictor(fit_spc(noisy_D), reg_weights(noisy_D), np.eye(k), 0.0)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1), kind=st.sampled_from(KINDS),
           log_lam=st.floats(-1.0, 3.0))
    def test_inner_minimizer(self, noisy_D, seed, kind, log_lam):
        rng = np.random.default_rng(seed)
        spc, w = fit_spc(noisy_D), reg_weights(noisy_D)
        xi, u_f, y_ref = random_inputs(rng, noisy_D)
        Qb = np.diag(rng.uniform(0.5, 2.0, len(y_ref)))
        lam = 10.0 ** log_lam
        y_hat = implicit_predictor(spc, w, Qb, lam, y_ref).predict(xi, u_f)
        y_star, _ = dpc_inner_oracle(noisy_D, kind, lam, Qb, xi, u_f, y_ref)
        assert np.max(np.abs(y_star - y_hat)) <= 1e-6 * (1 + np.max(np.abs(y_hat)))

    def test_corrupted_predictor_detected(self):
        def corrupt(pred):
            O = pred.O_dpc.copy()
            O[0, 0] += 1e-3
            return replace(pred, O_dpc=O)
        assert check_implicit_predictor(3, count=3).passed
        assert not check_implicit_predictor(3, count=3, corrupt=corrupt).passed


class TestExport:
    def test_json(self, noisy_D, tmp_path):
        spc, w = fit_spc(noisy_D), reg_weights(noisy_D)
        k = noisy_D.Yf.shape[0]
        pred = implicit_predictor(spc, w, np.eye(k), 10.0)
        path = tmp_path / "pred.json"
        export_json(path, spc, w, pred)
        doc = json.loads(path.read_text())
        np.testing.assert_array_equal(np.array(doc["O_spc"]), spc.O_spc)
        np.testing.assert_array_equal(np.array(doc["T_dpc"]), pred.T_dpc)
        assert "Q_reg" in doc and "conditioning" in doc


class TestRegularizerKind:
    def test_parse(self):
        assert RegularizerKind.parse("Two_Norm") is RegularizerKind.TWO_NORM
        assert RegularizerKind.parse(RegularizerKind.PROJECTION) is RegularizerKind.PROJECTION
        with pytest.raises(ValueError):
            RegularizerKind.parse("l1")
