# tcc/test_nn.py
import math

import pytest
import torch
from torch.func import functional_call

from tcc.errors import NumericError, ShapeError
from tcc.nn import (
    ContextTransformer,
    ModelConfig,
    OptimConfig,
    adam_step,
    build_model,
    compute_gradients,
    horizon,
    latent_length,
    make_optimizer,
    set_trainable,
)
from tcc.pipeline import contrastive_loss_terms
from tcc.utils import make_rng


# ----- shapes -----
def test_default_shape_algebra():
    cfg = ModelConfig()
    assert latent_length(128, cfg) == 16
    assert horizon(16, cfg.k_fraction) == 6
    assert horizon(4, 0.4) == 1
    assert horizon(10, 0.7) == 7


def test_too_short_inputs():
    with pytest.raises(ShapeError):
        latent_length(4, ModelConfig())
    with pytest.raises(ShapeError):
        horizon(1, 0.4)


def test_module_shapes(tiny_model_cfg):
    model = build_model(tiny_model_cfg, input_channels=2, sequence_length=32, num_classes=3)
    x = torch.randn(5, 2, 32)
    z = model.encode(x)
    assert z.shape == (5, 8, 4)
    assert (model.latent_length, model.k_steps) == (4, 1)
    c = model.context_vector(z[:, :, :3])
    assert c.shape == (5, 16)
    assert model.predict_future(c, 1).shape == (5, 8)
    assert model.project(c).shape == (5, 8)
    assert model(x).shape == (5, 3)
    with pytest.raises(ShapeError):
        model.predict_future(c, 2)
    with pytest.raises(ShapeError):
        model.encode(torch.randn(5, 1, 32))


def test_attention_weights_are_distributions(tiny_model_cfg):
    transformer = ContextTransformer(tiny_model_cfg, k_steps=1)
    tokens = torch.randn(3, 5, 16)
    _, weights = transformer.layers[0].attn(tokens)
    assert weights.shape == (3, 2, 5, 5)
    assert torch.allclose(weights.sum(dim=-1), torch.ones(3, 2, 5))


def test_positional_encoding_changes_context(tiny_model_cfg):
    torch.manual_seed(0)
    plain = ContextTransformer(tiny_model_cfg, k_steps=1)
    encoded = ContextTransformer(tiny_model_cfg.model_copy(update={"positional_encoding": True}), k_steps=1)
    encoded.load_state_dict(plain.state_dict())
    z = torch.randn(2, 8, 3)
    assert not torch.allclose(plain(z), encoded(z))


def test_heads_must_divide_h():
    with pytest.raises(ValueError):
        ModelConfig(h=10, heads=4)


def test_transformer_without_layers_returns_the_token(tiny_model_cfg):
    transformer = ContextTransformer(tiny_model_cfg.model_copy(update={"layers": 0}), k_steps=1)
    c = transformer(torch.randn(3, 8, 2))
    assert torch.equal(c, transformer.token[0].expand(3, -1))


def test_zero_attention_and_mlp_leave_the_residual(tiny_model_cfg):
    layer = ContextTransformer(tiny_model_cfg, k_steps=1).layers[0]
    with torch.no_grad():
        for module in (layer.attn, layer.mlp):
            for p in module.parameters():
                p.zero_()
    x = torch.randn(2, 5, 16)
    assert torch.equal(layer(x), x)


@pytest.mark.parametrize("train_mode", [True, False])
def test_zero_encoder_weights_give_zero_latents(tiny_model_cfg, train_mode):
    model = build_model(tiny_model_cfg, 1, 32, 3)
    with torch.no_grad():
        for p in model.encoder.parameters():
            p.zero_()
    model.train(train_mode)
    assert torch.count_nonzero(model.encode(torch.randn(4, 1, 32))) == 0


def test_eval_mode_is_deterministic():
    torch.manual_seed(0)
    model = build_model(ModelConfig(conv_channels=(8, 8), d=8, h=16, layers=2, heads=2), 1, 32, 3)
    model.eval()
    x = torch.randn(4, 1, 32)
    assert torch.equal(model(x), model(x))
    z = model.encode(x)
    assert torch.equal(model.context_vector(z[:, :, :3]), model.context_vector(z[:, :, :3]))


def test_linear_maps_match_matmul(tiny_model_cfg):
    torch.manual_seed(0)
    model = build_model(tiny_model_cfg, 1, 32, 3).double()
    c = torch.randn(5, 16, dtype=torch.float64)
    w_k = model.context.predictors[0].weight
    assert torch.allclose(model.predict_future(c, 1), c @ w_k.T, atol=1e-12)

    first, second = model.head.net[0], model.head.net[2]
    hidden = torch.clamp(c @ first.weight.T + first.bias, min=0.0)
    assert torch.allclose(model.project(c), hidden @ second.weight.T + second.bias, atol=1e-12)

    features = torch.randn(5, 8, 4, dtype=torch.float64)
    expected = features.reshape(5, 32) @ model.classifier.weight.T + model.classifier.bias
    assert torch.allclose(model.classify(features), expected, atol=1e-12)


# ----- gradients and optimizer -----
def test_non_finite_term_is_named():
    p = torch.ones(2, requires_grad=True)
    with pytest.raises(NumericError) as info:
        compute_gradients(lambda ps: {"loss": ps["p"].sum(), "cc": torch.tensor(float("nan"))}, {"p": p})
    assert info.value.term == "cc"


def test_frozen_params_get_zero_gradients():
    a = torch.ones(2, requires_grad=True)
    b = torch.ones(2, requires_grad=False)
    grads, values = compute_gradients(lambda ps: (3 * ps["a"] + ps["b"]).sum(), {"a": a, "b": b})
    assert grads["a"].tolist() == [3.0, 3.0]
    assert grads["b"].tolist() == [0.0, 0.0]
    assert values["loss"] == 8.0


def test_sum_of_squares_gradient_is_twice_the_parameter():
    p = torch.tensor([1.5, -2.0, 0.25], requires_grad=True)
    grads, values = compute_gradients(lambda ps: (ps["p"] ** 2).sum(), {"p": p})
    assert torch.allclose(grads["p"], 2 * p.detach())
    assert values["loss"] == pytest.approx(6.3125)


@pytest.mark.parametrize("constant", [
    lambda ps: torch.tensor(5.0),
    lambda ps: ps["p"].sum() * 0.0 + 5.0,
], ids=["detached", "attached"])
def test_constant_loss_has_zero_gradients(constant):
    p = torch.ones(3, requires_grad=True)
    grads, values = compute_gradients(constant, {"p": p})
    assert torch.count_nonzero(grads["p"]) == 0
    assert values["loss"] == 5.0


def test_first_adam_step_moves_by_learning_rate():
    p = torch.nn.Parameter(torch.tensor([1.0, -3.0], dtype=torch.float64))
    cfg = OptimConfig(lr=3e-4, weight_decay=0.0)
    adam_step({"p": p}, {"p": torch.ones(2, dtype=torch.float64)}, make_optimizer([p], cfg))
    assert p.detach().tolist() == pytest.approx([1.0 - 3e-4, -3.0 - 3e-4], abs=1e-9)


def test_adam_step_decoupled_decay_only_with_zero_gradient():
    p = torch.nn.Parameter(torch.tensor([2.0, -4.0], dtype=torch.float64))
    cfg = OptimConfig(lr=0.1, weight_decay=0.5)
    optimizer = make_optimizer([p], cfg)
    steps = adam_step({"p": p}, {"p": torch.zeros(2, dtype=torch.float64)}, optimizer)
    assert steps == 1
    assert p.detach().tolist() == pytest.approx([2.0 * 0.95, -4.0 * 0.95], abs=1e-12)


def test_adam_step_moves_against_gradient(tiny_model_cfg):
    model = build_model(tiny_model_cfg, 1, 32, 3)
    set_trainable([model.context, model.head], False)
    params = {n: p for n, p in model.named_parameters() if p.requires_grad}
    before = {n: p.detach().clone() for n, p in model.named_parameters()}
    x = torch.randn(4, 1, 32)
    grads, _ = compute_gradients(lambda _: model(x).pow(2).mean(), params)
    adam_step(params, grads, make_optimizer(params.values(), OptimConfig()))
    after = dict(model.named_parameters())
    assert not torch.equal(before["classifier.weight"], after["classifier.weight"])
    assert torch.equal(before["context.token"], after["context.token"])


# ----- finite-difference fidelity of the full objectives -----
class _Objective(torch.nn.Module):
    def __init__(self, model, cfg, t, labels):
        super().__init__()
        self.model = model
        self.cfg = cfg
        self.t = t
        self.labels = labels

    def forward(self, x_w, x_s):
        return contrastive_loss_terms(self.model, x_w, x_s, self.t, self.cfg, self.labels)["loss"]


@pytest.mark.parametrize("labels", [None, torch.tensor([0, 0, 1, 1])], ids=["unsup", "semi"])
def test_objective_gradients_every_coordinate(tiny_train_cfg, labels):
    torch.manual_seed(0)
    model = build_model(tiny_train_cfg.model, 1, 32, 3).double()
    model.train()
    rng = make_rng(0)
    x_w = torch.from_numpy(rng.normal(size=(4, 1, 32)))
    x_s = torch.from_numpy(rng.normal(size=(4, 1, 32)))
    objective = _Objective(model, tiny_train_cfg, t=2, labels=labels)

    names = [n for n, _ in model.named_parameters() if n.split(".", 1)[0] in ("encoder", "context", "head")]
    params = dict(model.named_parameters())
    inputs = tuple(params[n].detach().clone().requires_grad_(True) for n in names)

    def fn(*flat):
        return functional_call(objective, {f"model.{n}": v for n, v in zip(names, flat)}, (x_w, x_s))

    assert torch.autograd.gradcheck(fn, inputs, eps=1e-6, atol=1e-5, rtol=1e-4, fast_mode=False)


def test_objective_terms_finite_at_init(tiny_train_cfg):
    torch.manual_seed(1)
    model = build_model(tiny_train_cfg.model, 1, 32, 3)
    x = torch.randn(4, 1, 32)
    terms = contrastive_loss_terms(model, x, x + 0.01, 2, tiny_train_cfg)
    assert all(torch.isfinite(v) for v in terms.values())
    w = tiny_train_cfg.loss
    expected = w.lambda1 * (terms["tc_s"] + terms["tc_w"]) + w.lambda2 * terms["cc"]
    assert float(terms["loss"]) == pytest.approx(float(expected))


def test_uninformative_predictors_give_log_batch_per_direction(tiny_train_cfg):
    torch.manual_seed(2)
    model = build_model(tiny_train_cfg.model, 1, 32, 3)
    with torch.no_grad():
        for predictor in model.context.predictors:
            predictor.weight.zero_()
    x = torch.randn(4, 1, 32)
    terms = contrastive_loss_terms(model, x, x + 0.05, 2, tiny_train_cfg)
    assert float(terms["tc_s"]) == pytest.approx(math.log(4), abs=1e-6)
    assert float(terms["tc_w"]) == pytest.approx(math.log(4), abs=1e-6)
    expected = 2 * math.log(4) + tiny_train_cfg.loss.lambda2 * float(terms["cc"])
    assert float(terms["loss"]) == pytest.approx(expected, abs=1e-5)
