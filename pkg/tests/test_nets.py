import dataclasses

import pytest
import torch

from latentnav.nets import (
    CHECKPOINT_VERSION,
    BoundedNormal,
    LatentState,
    NetConfig,
    WorldModel,
    load_checkpoint,
    save_checkpoint,
)

CFG = NetConfig(image_size=16, conv_channels=(4, 8), embed_dim=16, deter_dim=8,
                stoch_dim=4, hidden_dim=8, hidden_layers=1)


def make_model(seed=0, cfg=CFG):
    torch.manual_seed(seed)
    return WorldModel(cfg)


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        NetConfig(image_size=30, conv_channels=(4, 8))
    with pytest.raises(ValueError, match="action_bounds"):
        NetConfig(action_dim=3)
    assert CFG.feature_dim == 12


def test_encoder_decoder_shapes():
    model = make_model()
    obs = torch.randint(0, 3, (2, 5, 16, 16))
    emb = model.encode_image(obs)
    assert emb.shape == (2, 5, 16)
    feats = torch.randn(2, 5, CFG.feature_dim)
    dec = model.decode(feats)
    assert dec.image_logits.shape == (2, 5, 3, 16, 16)
    assert dec.nonvisual_mean.shape == (2, 5, 8)
    assert dec.nonvisual_std.shape == (8,)
    assert dec.reward_mean.shape == (2, 5)
    assert dec.value_mean.shape == (2, 5)
    assert dec.term_alpha.shape == (2, 5, 2)
    assert dec.term_beta.shape == (2, 5, 2)
    assert dec.action_mean.shape == (2, 5, 4)


def test_batch_equivariance():
    model = make_model().double()
    obs = torch.randint(0, 3, (3, 16, 16))
    batch = model.encode_image(obs)
    singles = torch.stack([model.encode_image(obs[i]) for i in range(3)])
    assert torch.allclose(batch, singles, atol=1e-12)
    feats = torch.randn(3, CFG.feature_dim, dtype=torch.float64)
    dec_b = model.decode(feats)
    for i in range(3):
        dec_i = model.decode(feats[i])
        assert torch.allclose(dec_b.image_logits[i], dec_i.image_logits, atol=1e-12)
        assert torch.allclose(dec_b.reward_mean[i], dec_i.reward_mean, atol=1e-12)


def test_prior_and_posterior_stds_strictly_positive():
    model = make_model()
    g = torch.Generator().manual_seed(0)
    state = LatentState(torch.randn(64, 8, generator=g) * 10,
                        torch.randn(64, 4, generator=g) * 10)
    deter, mean, std = model.rssm.prior_step(state, torch.randn(64, 4, generator=g))
    assert std.min() >= CFG.min_std
    embed = torch.randn(64, 16, generator=g) * 10
    nonvis = torch.randn(64, 8, generator=g) * 10
    _, post_std = model.rssm.posterior(deter, embed, nonvis)
    assert post_std.min() >= CFG.min_std


def test_rssm_steps_are_deterministic():
    model = make_model()
    state = LatentState(torch.randn(4, 8), torch.randn(4, 4))
    action = torch.randn(4, 4)
    a = model.rssm.prior_step(state, action)
    b = model.rssm.prior_step(state, action)
    for x, y in zip(a, b):
        assert torch.equal(x, y)


def test_posterior_requires_nonvisual_when_configured():
    model = make_model()
    deter = torch.zeros(2, 8)
    embed = torch.zeros(2, 16)
    with pytest.raises(ValueError, match="nonvisual"):
        model.rssm.posterior(deter, embed, None)


def test_ablated_posterior_ignores_nonvisual():
    cfg = dataclasses.replace(CFG, posterior_uses_nonvisual=False, predict_nonvisual=False)
    model = make_model(cfg=cfg)
    mean, std = model.rssm.posterior(torch.zeros(2, 8), torch.zeros(2, 16), None)
    assert mean.shape == (2, 4) and std.shape == (2, 4)


def test_beta_head_parameters_positive_everywhere():
    model = make_model()
    feats = torch.randn(10_000, CFG.feature_dim) * 20
    dec = model.decode(feats)
    assert dec.term_alpha.min() > 0
    assert dec.term_beta.min() > 0
    means = dec.term_mean
    assert means.min() > 0 and means.max() < 1


def test_actor_samples_respect_action_box():
    model = make_model()
    feats = torch.randn(5_000, CFG.feature_dim) * 30
    dist = model.actor(feats)
    actions = dist.sample(torch.Generator().manual_seed(0))
    bounds = torch.tensor(CFG.action_bounds)
    assert (actions.abs() <= bounds).all()
    assert (dist.mode().abs() <= bounds).all()
    lp = dist.log_prob(actions)
    assert torch.isfinite(lp).all()


def test_bounded_normal_mode_and_log_prob():
    bounds = torch.tensor([2.0, 0.5])
    dist = BoundedNormal(torch.zeros(2), torch.ones(2), bounds)
    assert torch.allclose(dist.mode(), torch.zeros(2))
    # log density stays finite right at the box edge thanks to the clamp
    lp = dist.log_prob(bounds.clone())
    assert torch.isfinite(lp).all()
    g = torch.Generator().manual_seed(1)
    samples = torch.stack([dist.rsample(g) for _ in range(500)])
    assert (samples.abs() < bounds).all()


def test_bounded_normal_log_prob_integrates_to_one():
    # 1D numeric integral of exp(log_prob) over the box
    bounds = torch.tensor([1.5])
    dist = BoundedNormal(torch.tensor([0.3]), torch.tensor([0.8]), bounds)
    xs = torch.linspace(-1.5 + 1e-4, 1.5 - 1e-4, 20_001).unsqueeze(-1)
    dens = dist.log_prob(xs).exp()
    integral = torch.trapezoid(dens, xs.squeeze(-1))
    assert float(integral) == pytest.approx(1.0, abs=2e-3)


def test_latent_state_feature_and_detach():
    state = LatentState(torch.ones(2, 3, requires_grad=True), torch.zeros(2, 2))
    assert state.feature.shape == (2, 5)
    det = state.detach()
    assert not det.deter.requires_grad
    assert torch.equal(det.feature, state.feature)


def test_parameter_groups_partition_the_model():
    model = make_model()
    world = {id(p) for p in model.world_parameters()}
    value = {id(p) for p in model.value_parameters()}
    actor = {id(p) for p in model.actor_parameters()}
    assert not (world & value) and not (world & actor) and not (value & actor)
    assert world | value | actor == {id(p) for p in model.parameters()}


def test_checkpoint_roundtrip(tmp_path):
    model = make_model(seed=5)
    path = tmp_path / "m.pt"
    save_checkpoint(path, model, extra={"steps": 123, "note": "x"})
    loaded, extra = load_checkpoint(path)
    assert extra == {"steps": 123, "note": "x"}
    assert loaded.cfg == model.cfg
    for a, b in zip(model.state_dict().values(), loaded.state_dict().values()):
        assert torch.equal(a, b)
    # same latent step through both models
    state = LatentState(torch.randn(2, 8), torch.randn(2, 4))
    action = torch.randn(2, 4)
    for x, y in zip(model.rssm.prior_step(state, action),
                    loaded.rssm.prior_step(state, action)):
        assert torch.equal(x, y)


def test_checkpoint_version_mismatch_rejected(tmp_path):
    model = make_model()
    path = tmp_path / "m.pt"
    save_checkpoint(path, model)
    payload = torch.load(path, weights_only=True)
    payload["format_version"] = CHECKPOINT_VERSION + 1
    torch.save(payload, path)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)
