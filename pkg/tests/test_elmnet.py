import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from hrlearn import elmnet, oracle, regcore
from hrlearn.elmnet import Batch, ElmModel
from hrlearn.errors import DimensionMismatch, IllConditioned
from hrlearn.regcore import HrConfig, Mode, Scalar


def scalar_model(w, b, beta):
    return ElmModel(np.array([[w]], float), np.array([b], float), np.array([[beta]], float))


def random_batch(rng, N, d=4, k=2):
    return Batch(rng.uniform(-1, 1, (N, d)), rng.standard_normal((N, k)))


# model -----------------------------------------------------------------------------------

def test_init_elm_shapes_ranges_determinism():
    m = elmnet.init_elm(4, 25, 2, seed=7)
    assert m.input_weights.shape == (25, 4) and m.bias.shape == (25,)
    assert m.output_weights.shape == (25, 2) and not m.output_weights.any()
    assert np.all(np.abs(m.input_weights) <= 1) and np.all((m.bias >= 0) & (m.bias <= 1))
    m2 = elmnet.init_elm(4, 25, 2, seed=7)
    assert np.array_equal(m.input_weights, m2.input_weights) and np.array_equal(m.bias, m2.bias)


def test_init_elm_rejects_bad_sizes():
    with pytest.raises(ValueError):
        elmnet.init_elm(0, 3, 1)


def test_scalar_pipeline():
    m = elmnet.init_elm(1, 1, 1, seed=0).with_beta([[2.0]])
    x = np.array([[0.3]])
    expected = 2.0 * expit(m.input_weights[0, 0] * 0.3 + m.bias[0])
    assert elmnet.predict(m, x)[0, 0] == pytest.approx(expected)


def test_hidden_matrix_examples():
    zero = ElmModel(np.zeros((2, 3)), np.zeros(2), np.zeros((2, 1)))
    assert np.all(elmnet.hidden_matrix(zero, np.ones((3, 3))) == 0.5)
    assert elmnet.hidden_matrix(zero, np.ones((3, 3))).shape == (3, 2)
    assert elmnet.hidden_matrix(scalar_model(1, 0.5, 0), [[0.0]])[0, 0] == pytest.approx(0.62246, abs=1e-5)
    with pytest.raises(DimensionMismatch):
        elmnet.hidden_matrix(zero, np.ones((2, 4)))


def test_batch_validation():
    with pytest.raises(DimensionMismatch):
        Batch(np.ones((3, 2)), np.ones((2, 1)))
    assert Batch(np.ones((3, 2)), np.ones(3)).targets.shape == (3, 1)


def test_predict_zero_beta():
    m = elmnet.init_elm(4, 5, 2, seed=1)
    assert not elmnet.predict(m, np.ones((3, 4))).any()


# batch training ----------------------------------------------------------------------------

def identity_feature_model(L):
    """Model whose hidden matrix is diag(s) on one-hot inputs via huge weights."""
    W = np.eye(L) * 40.0
    return ElmModel(W, np.full(L, -20.0), np.zeros((L, 1)))


def test_train_pinv_square_and_interpolates():
    rng = np.random.default_rng(0)
    m = elmnet.init_elm(3, 3, 1, seed=2)
    X = rng.uniform(-1, 1, (3, 3))
    Y = rng.standard_normal((3, 1))
    trained = elmnet.train_pinv(m, Batch(X, Y))
    H = elmnet.hidden_matrix(m, X)
    assert np.allclose(trained.output_weights, np.linalg.solve(H, Y))
    assert np.allclose(elmnet.predict(trained, X), Y, atol=1e-8)


def test_train_pinv_zero_column_gets_zero_weight():
    m = ElmModel(np.array([[1.0], [0.0]]), np.array([0.0, -800.0]), np.zeros((2, 1)))
    X = np.array([[0.5], [1.0], [-0.3]])
    trained = elmnet.train_pinv(m, Batch(X, np.array([1.0, 2.0, 0.0])))
    assert elmnet.hidden_matrix(m, X)[:, 1].max() < 1e-300
    assert trained.output_weights[1, 0] == 0.0


def test_train_hr_reduces_to_ridge():
    rng = np.random.default_rng(1)
    m = elmnet.init_elm(4, 25, 2, seed=3)
    batch = random_batch(rng, 60)
    mu = 1.827e-5
    trained, _ = elmnet.train_hr(m, batch, Scalar(1 / mu), HrConfig(order=0))
    H = elmnet.hidden_matrix(m, batch.inputs)
    ref = np.linalg.solve(H.T @ H + np.eye(25) / mu, H.T @ batch.targets)
    assert np.allclose(trained.output_weights, ref, rtol=1e-10, atol=1e-14)


def test_train_hr_approaches_pinv_as_ridge_vanishes():
    rng = np.random.default_rng(2)
    m = elmnet.init_elm(4, 6, 1, seed=4)
    batch = random_batch(rng, 40, k=1)
    ref = elmnet.train_pinv(m, batch).output_weights
    errs = [np.linalg.norm(elmnet.train_hr(m, batch, Scalar(t), HrConfig(order=1))[0].output_weights - ref)
            for t in (1e-2, 1e-4, 1e-6)]
    assert errs[0] > errs[1] > errs[2]


def test_fixed_features_untouched_by_training():
    rng = np.random.default_rng(3)
    m = elmnet.init_elm(4, 8, 2, seed=5)
    W, b = m.input_weights.copy(), m.bias.copy()
    batch = random_batch(rng, 20)
    elmnet.train_hr(m, batch, Scalar(1.0))
    s = elmnet.ihr_init(m, batch, Scalar(1.0))
    elmnet.ihr_update(s, random_batch(rng, 3))
    assert np.array_equal(m.input_weights, W) and np.array_equal(m.bias, b)
    with pytest.raises(ValueError):
        m.input_weights[0, 0] = 1.0


# incremental ELM --------------------------------------------------------------------------------

def test_ielm_init_worked_case():
    m = ElmModel(np.zeros((2, 2)), np.zeros(2), np.zeros((2, 1)))
    # hidden matrix fixed at 0.5; check info and beta against the closed form
    s = elmnet.ielm_init(m, Batch(np.zeros((2, 2)), np.ones(2)), mu=1.0)
    H = np.full((2, 2), 0.5)
    assert np.allclose(s.info, H.T @ H + np.eye(2))
    assert np.allclose(s.beta, np.linalg.solve(s.info, H.T @ np.ones((2, 1))))


def test_ielm_init_table_sizes():
    rng = np.random.default_rng(4)
    m = elmnet.init_elm(4, 25, 2, seed=0)
    s = elmnet.ielm_init(m, random_batch(rng, 2), mu=1.827e-5)
    assert s.info.shape == (25, 25) and s.step == 1


def test_ielm_zero_rows_no_change():
    rng = np.random.default_rng(5)
    m = ElmModel(np.zeros((3, 4)), np.full(3, -800.0), np.zeros((3, 2)))
    s = elmnet.ielm_init(elmnet.init_elm(4, 3, 2, seed=1), random_batch(rng, 5), mu=1.0)
    s = s.__class__(**{**s.__dict__, "model": m})
    s2 = elmnet.ielm_update(s, random_batch(rng, 2))
    assert np.allclose(s2.beta, s.beta) and np.allclose(s2.info_inv_approx, s.info_inv_approx)


def test_ielm_sequential_equals_stacked():
    rng = np.random.default_rng(6)
    m = elmnet.init_elm(4, 10, 2, seed=2)
    b0, b1, b2 = random_batch(rng, 12), random_batch(rng, 1), random_batch(rng, 1)
    s = elmnet.ielm_update(elmnet.ielm_update(elmnet.ielm_init(m, b0, 0.5), b1), b2)
    both = Batch(np.vstack([b1.inputs, b2.inputs]), np.vstack([b1.targets, b2.targets]))
    s2 = elmnet.ielm_update(elmnet.ielm_init(m, b0, 0.5), both)
    assert np.allclose(s.beta, s2.beta, rtol=1e-8)
    H = elmnet.hidden_matrix(m, np.vstack([b0.inputs, both.inputs]))
    Y = np.vstack([b0.targets, both.targets])
    ref = np.linalg.solve(H.T @ H + 2.0 * np.eye(10), H.T @ Y)
    assert np.allclose(s.beta, ref, rtol=1e-8)
    assert np.allclose(s.info, s.info.T, atol=1e-10)


# incremental HR --------------------------------------------------------------------------------

def stacked_reference(model, batches, R, config):
    return oracle.stacked_solve(
        [(elmnet.hidden_matrix(model, b.inputs), b.targets) for b in batches], R, config)


@pytest.mark.parametrize("first_rows", [2, 30])
def test_ihr_matches_batch_solution(first_rows):
    rng = np.random.default_rng(first_rows)
    m = elmnet.init_elm(4, 8, 2, seed=3)
    batches = [random_batch(rng, first_rows)] + [random_batch(rng, int(rng.integers(1, 6))) for _ in range(5)]
    s = elmnet.ihr_init(m, batches[0], Scalar(0.3), HrConfig(order=2))
    assert s.config.mode is (Mode.SWAPPED if first_rows < 8 else Mode.STANDARD)
    for i, b in enumerate(batches[1:], start=2):
        s = elmnet.ihr_update(s, b)
        ref = stacked_reference(m, batches[:i], s.reg, s.config)
        assert np.linalg.norm(s.beta - ref) <= 1e-8 * np.linalg.norm(ref)


def test_ihr_init_worked_case_and_c0_reduction():
    m = identity_feature_model(2)
    # hidden matrix of one-hot inputs is (numerically) the identity
    X = np.eye(2)
    H = elmnet.hidden_matrix(m, X)
    assert np.allclose(H, np.eye(2), atol=1e-8)
    s = elmnet.ihr_init(m, Batch(X, np.array([1.0, 4.0])), Scalar(1.0), HrConfig(order=1))
    G, cross = H.T @ H, H.T @ np.array([[1.0], [4.0]])
    beta, _ = regcore.hr_solve(regcore.RegProblem(G, cross), Scalar(1.0), HrConfig(order=1))
    assert np.allclose(s.beta, beta)
    rng = np.random.default_rng(8)
    mm = elmnet.init_elm(4, 6, 2, seed=9)
    b = random_batch(rng, 3)
    a = elmnet.ihr_init(mm, b, Scalar(4.0), HrConfig(order=0))
    c = elmnet.ielm_init(mm, b, 0.25)
    assert np.allclose(a.beta, c.beta) and np.allclose(a.info_inv_approx, c.info_inv_approx)


def test_ihr_c0_tracks_ielm():
    rng = np.random.default_rng(9)
    m = elmnet.init_elm(4, 6, 2, seed=10)
    b0 = random_batch(rng, 10)
    a = elmnet.ihr_init(m, b0, Scalar(2.0), HrConfig(order=0))
    c = elmnet.ielm_init(m, b0, 0.5)
    for _ in range(5):
        b = random_batch(rng, 2)
        a, c = elmnet.ihr_update(a, b), elmnet.ielm_update(c, b)
    assert np.allclose(a.beta, c.beta, rtol=1e-8)


def test_ihr_zero_row_batch_keeps_beta():
    rng = np.random.default_rng(10)
    m = elmnet.init_elm(4, 6, 2, seed=11)
    s = elmnet.ihr_init(m, random_batch(rng, 10), Scalar(1.0))
    s2 = elmnet.ihr_update(s, Batch(np.zeros((0, 4)), np.zeros((0, 2))))
    assert np.allclose(s2.beta, s.beta)


# bias correction --------------------------------------------------------------------------------

def test_bias_correction_recovers_least_squares():
    rng = np.random.default_rng(11)
    m = elmnet.init_elm(4, 5, 2, seed=12)
    batches = [random_batch(rng, 30)] + [random_batch(rng, 4) for _ in range(4)]
    s = elmnet.ihr_init(m, batches[0], Scalar(0.5), HrConfig(order=1))
    assert s.bias_active

    def ls(bs):
        H = np.vstack([elmnet.hidden_matrix(m, b.inputs) for b in bs])
        return oracle.pinv(H) @ np.vstack([b.targets for b in bs])

    ref = ls(batches[:1])
    assert np.linalg.norm(s.corrected_beta - ref) <= 1e-8 * np.linalg.norm(ref)
    for i, b in enumerate(batches[1:], start=2):
        s = elmnet.bias_correct(elmnet.ihr_update(s, b), b)
        ref = ls(batches[:i])
        assert np.linalg.norm(s.corrected_beta - ref) <= 1e-8 * np.linalg.norm(ref)


def test_bias_correction_noop_without_regularization():
    rng = np.random.default_rng(12)
    m = elmnet.init_elm(4, 4, 1, seed=13)
    s = elmnet.ihr_init(m, random_batch(rng, 20, k=1), Scalar(0.0))
    b = random_batch(rng, 3, k=1)
    s2 = elmnet.bias_correct(elmnet.ihr_update(s, b), b)
    assert not s2.bias_acc.any()


def test_bias_correction_rejects_ill_conditioned_gram():
    X = np.array([[0.0, 0.0, 0.0, 0.0], [1e-5, 0, 0, 0], [2e-5, 0, 0, 0]])
    W = np.zeros((2, 4))
    W[0, 0] = 1.0
    W[1, 0] = 1.0 + 1e-4
    m = ElmModel(W, np.zeros(2), np.zeros((2, 1)))
    s = elmnet.ihr_init(m, Batch(X, np.ones(3)), Scalar(1.0))
    b = Batch(X[:1], np.ones(1))
    with pytest.raises(IllConditioned):
        elmnet.bias_correct(elmnet.ihr_update(s, b), b)


# approximate EQLM update ---------------------------------------------------------------------------

def test_eqlm_matches_literal_recursion():
    rng = np.random.default_rng(13)
    m = elmnet.init_elm(4, 25, 2, seed=14)
    s = elmnet.ihr_init(m, random_batch(rng, 2), Scalar(1 / 1.827e-5), HrConfig(order=1))
    P, beta = s.info_inv_approx.copy(), s.beta.copy()
    for _ in range(50):
        b = random_batch(rng, 2)
        s = elmnet.eqlm_update(s, b)
        P, beta = oracle.rls_step(P, beta, elmnet.hidden_matrix(m, b.inputs), b.targets)
        assert np.linalg.norm(s.beta - beta) <= 1e-10 * max(np.linalg.norm(beta), 1e-300)
        assert np.linalg.norm(s.info_inv_approx - P) <= 1e-10 * np.linalg.norm(P)


def test_eqlm_c0_equals_ielm():
    rng = np.random.default_rng(14)
    m = elmnet.init_elm(4, 6, 2, seed=15)
    b0 = random_batch(rng, 2)
    a = elmnet.ihr_init(m, b0, Scalar(3.0), HrConfig(order=0))
    c = elmnet.ielm_init(m, b0, 1 / 3.0)
    for _ in range(5):
        b = random_batch(rng, 2)
        a, c = elmnet.eqlm_update(a, b), elmnet.ielm_update(c, b)
    assert np.allclose(a.beta, c.beta, rtol=1e-12, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_info_stays_symmetric(seed):
    rng = np.random.default_rng(seed)
    m = elmnet.init_elm(4, 7, 2, seed=seed)
    s = elmnet.ihr_init(m, random_batch(rng, 3), Scalar(1.0))
    for _ in range(10):
        s = elmnet.eqlm_update(s, random_batch(rng, 2))
    assert np.abs(s.info - s.info.T).max() <= 1e-10


def test_determinism():
    def run():
        rng = np.random.default_rng(15)
        m = elmnet.init_elm(4, 6, 2, seed=16)
        s = elmnet.ihr_init(m, random_batch(rng, 4), Scalar(1.0))
        for _ in range(5):
            s = elmnet.eqlm_update(s, random_batch(rng, 2))
        return s.beta

    assert np.array_equal(run(), run())


# serialization ---------------------------------------------------------------------------------------

def test_model_roundtrip(tmp_path):
    m = elmnet.init_elm(4, 5, 2, seed=21).with_beta(np.arange(10.0).reshape(5, 2))
    path = tmp_path / "m.model"
    elmnet.save_model(m, path)
    back = elmnet.load_model(path)
    assert back.seed == 21 and back.activation == "sigmoid"
    for a, b in ((m.input_weights, back.input_weights), (m.bias, back.bias),
                 (m.output_weights, back.output_weights)):
        assert np.array_equal(a, b)
    assert path.stat().st_size == 56 + 8 * (20 + 5 + 10)


def test_model_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"x" * 80)
    with pytest.raises(ValueError):
        elmnet.load_model(p)
