import numpy as np
import pytest

from lczkit.errors import DataError, DegenerateGradientError, UsageError
from lczkit.perturb import (
    BatchResult,
    Perturbation,
    batch_perturb,
    delta_c,
    perturb_scene,
)
from lczkit.regressor import RegConfig, init_regressor
from lczkit.vae import VaeConfig, init_vae

SHAPE = (2, 4, 4)
LATENT = 4


def _models(activation="tanh", seed=0):
    rng = np.random.default_rng(seed)
    vae = init_vae(SHAPE, VaeConfig(latent_dim=LATENT, hidden=8), rng)
    reg = init_regressor(LATENT, RegConfig(hidden=(6, 3), activation=activation), rng)
    reg.t_mean, reg.t_std = 290.0, 2.0
    return vae, reg


def test_delta_c_hand_example():
    assert np.allclose(delta_c(np.array([2.0, 0.0]), 4.0), [2.0, 0.0])


def test_delta_c_zero_dt():
    g = np.array([0.3, -1.2, 0.7])
    assert not delta_c(g, 0.0).any()


def test_delta_c_eq_identity_and_parallelism():
    rng = np.random.default_rng(1)
    for _ in range(200):
        g = rng.standard_normal(64)
        dt = rng.uniform(-10, 10)
        dc = delta_c(g, dt)
        assert abs(dc @ g - dt) <= 1e-9 * max(1.0, abs(dt))
        lam = dt / (g @ g)
        assert np.allclose(dc, lam * g, rtol=1e-12, atol=1e-15)


def test_delta_c_degenerate_gradient_raises():
    with pytest.raises(DegenerateGradientError):
        delta_c(np.full(8, 1e-10), 1.0)


def test_delta_c_minimal_norm_among_constraint_satisfiers():
    rng = np.random.default_rng(2)
    for _ in range(50):
        g = rng.standard_normal(16)
        dt = rng.uniform(-5, 5)
        dc = delta_c(g, dt)
        for _ in range(100):
            null = rng.standard_normal(16)
            null -= (null @ g) / (g @ g) * g  # project out the gradient direction
            alt = dc + null
            assert abs(alt @ g - dt) <= 1e-8 * max(1.0, abs(dt))
            assert np.linalg.norm(dc) <= np.linalg.norm(alt) + 1e-12


def test_perturb_zero_dt_reproduces_reconstruction_bit_exact():
    vae, reg = _models()
    s = np.random.default_rng(3).standard_normal(SHAPE)
    cf = perturb_scene(vae, reg, s, Perturbation(0.0))
    assert cf.counterfactual.tobytes() == cf.reconstruction.tobytes()
    assert not cf.delta_c.any()
    assert cf.achieved_dt == 0.0


def test_perturb_closed_form_parallel_to_gradient():
    from lczkit.regressor import grad_wrt_code
    from lczkit.vae import encode_mean

    vae, reg = _models(seed=4)
    s = np.random.default_rng(5).standard_normal(SHAPE)
    cf = perturb_scene(vae, reg, s, Perturbation(2.0))
    g = grad_wrt_code(reg, encode_mean(vae, s))
    cos = (cf.delta_c @ g) / (np.linalg.norm(cf.delta_c) * np.linalg.norm(g))
    assert abs(cos - 1.0) <= 1e-9


def test_perturb_linear_regressor_exact_across_sweep():
    vae, reg = _models(activation="identity", seed=6)
    s = np.random.default_rng(7).standard_normal(SHAPE)
    for dt in (1.0, 3.0, 5.0, 10.0, -1.0, -3.0, -5.0, -10.0):
        cf = perturb_scene(vae, reg, s, Perturbation(dt))
        assert cf.achieved_dt == pytest.approx(dt, abs=1e-6)


def test_perturb_first_order_consistency_smooth_model():
    vae, reg = _models(activation="tanh", seed=8)
    rng = np.random.default_rng(9)
    for _ in range(5):
        s = rng.standard_normal(SHAPE)
        dt = 1e-3
        cf = perturb_scene(vae, reg, s, Perturbation(dt))
        assert abs(cf.achieved_dt - dt) / dt <= 0.1


def test_perturb_iterative_reaches_requested_change():
    vae, reg = _models(activation="tanh", seed=10)
    s = np.random.default_rng(11).standard_normal(SHAPE)
    cf = perturb_scene(vae, reg, s, Perturbation(0.5, mode="iterative", steps=100))
    assert abs(cf.achieved_dt) >= 0.5 * 0.9  # early stop once |change| >= |dt|
    assert np.sign(cf.achieved_dt) == 1.0


def test_perturb_iterative_zero_dt():
    vae, reg = _models(seed=12)
    s = np.random.default_rng(13).standard_normal(SHAPE)
    cf = perturb_scene(vae, reg, s, Perturbation(0.0, mode="iterative"))
    assert not cf.delta_c.any()


def test_perturb_freezes_all_weights():
    vae, reg = _models(seed=14)
    before = {f"v/{k}": t.value.tobytes() for k, t in vae.params.items()}
    before.update({f"r/{k}": t.value.tobytes() for k, t in reg.params.items()})
    perturb_scene(vae, reg, np.random.default_rng(15).standard_normal(SHAPE),
                  Perturbation(3.0))
    after = {f"v/{k}": t.value.tobytes() for k, t in vae.params.items()}
    after.update({f"r/{k}": t.value.tobytes() for k, t in reg.params.items()})
    assert before == after


def test_batch_cardinality():
    vae, reg = _models(seed=16)
    rng = np.random.default_rng(17)
    scenes = [rng.standard_normal(SHAPE) for _ in range(2)]
    sweep = [1.0, 3.0, 5.0, 10.0, -1.0, -3.0, -5.0, -10.0]
    result = batch_perturb(vae, reg, scenes, sweep)
    assert len(result.scenes) == 16
    assert not result.failures


def test_batch_empty_sweep():
    vae, reg = _models(seed=18)
    result = batch_perturb(vae, reg, [np.zeros(SHAPE)], [])
    assert result.scenes == []


def test_batch_order_independence():
    vae, reg = _models(seed=19)
    rng = np.random.default_rng(20)
    scenes = [(f"s{i}", rng.standard_normal(SHAPE)) for i in range(4)]
    fwd = batch_perturb(vae, reg, scenes, [1.0, -2.0])
    rev = batch_perturb(vae, reg, scenes[::-1], [1.0, -2.0])
    by_key_fwd = {(c.scene_id, c.requested_dt): c.counterfactual.tobytes() for c in fwd.scenes}
    by_key_rev = {(c.scene_id, c.requested_dt): c.counterfactual.tobytes() for c in rev.scenes}
    assert by_key_fwd == by_key_rev


def test_batch_all_degenerate_raises():
    vae, reg = _models(seed=21)
    for t in reg.params.values():
        t.value[:] = 0.0  # gradient identically zero
    with pytest.raises(DataError):
        batch_perturb(vae, reg, [np.zeros(SHAPE)], [1.0])


def test_batch_empty_scene_list():
    vae, reg = _models(seed=22)
    with pytest.raises(UsageError):
        batch_perturb(vae, reg, [], [1.0])


def test_perturbation_validation():
    with pytest.raises(UsageError):
        Perturbation(float("nan"))
    with pytest.raises(UsageError):
        Perturbation(1.0, mode="sideways")
    with pytest.raises(UsageError):
        Perturbation(1.0, mode="iterative", steps=0)
