import math

import pytest

import resgate


def test_gate_param_count_reference_values():
    assert resgate.gate_param_count("vector", "per-module", "linear", 1024, 24) == 50_380_800
    assert resgate.gate_param_count("scalar", "per-module", "linear", 1024, 24) == 49_200
    assert resgate.gate_param_count("vector", "shared", "linear", 1024, 24) == 2_099_200
    assert resgate.gate_param_count("scalar", "shared", "linear", 1024, 24) == 2_050
    assert resgate.gate_param_count("vector", "per-module", "two-layer", 1024, 24) == 201_474_048


def test_quantile_threshold():
    assert resgate.quantile_threshold([1.0, 2.0, 3.0, 4.0, 5.0], 0.5) == 3.0
    assert resgate.quantile_threshold([0.1, 0.2, 0.3, 0.4], 0.25) == pytest.approx(0.175, abs=1e-15)
    with pytest.raises(Exception):
        resgate.quantile_threshold([], 0.5)


def test_budget_schedule():
    assert resgate.budget_at(1.0, 0.8, 5, 3) == pytest.approx(0.9)
    assert resgate.budget_at(1.0, 0.8, 1, 1) == 1.0


def test_select_skips_budget_half():
    mask = resgate.select_skips([0.1, 0.9, 0.5, 0.7], 0.5)
    assert mask == [True, False, True, False]


def test_random_skip_mask_exact_count():
    mask = resgate.random_skip_mask(100, 0.25, seed=7)
    assert sum(mask) == 25
    assert mask == resgate.random_skip_mask(100, 0.25, seed=7)


def test_tokenizer_round_trip():
    ids = resgate.encode_bytes("hello")
    assert resgate.decode_bytes(ids) == "hello"
    assert resgate.token_label(resgate.BOS_ID) == "<bos>"


def test_model_forward_and_generate(tmp_path):
    model = resgate.Model(layers=2, hidden=32, heads=4, ff_dim=64, max_seq=32, seed=1)
    tokens = [resgate.BOS_ID] + resgate.encode_bytes("abc")
    logits, masks = model.forward(tokens, budget=1.0)
    assert len(logits) == len(tokens) * 258
    assert all(math.isfinite(x) for x in logits)
    assert len(masks) == 2 * 2  # layers * {attention, mlp}
    assert all(len(m) == len(tokens) for m in masks)

    out = model.generate(tokens, budget=0.8, max_new_tokens=4, seed=0)
    assert out["tokens"][: len(tokens)] == tokens
    assert len(out["tokens"]) <= len(tokens) + 4
    assert 0.0 <= out["saved_fraction"] <= 1.0

    path = tmp_path / "model.bin"
    model.save(str(path))
    loaded = resgate.Model.load(str(path))
    logits2, _ = loaded.forward(tokens, budget=1.0)
    # Checkpoints store float32 values, so the reload agrees to float32
    # precision rather than exactly.
    assert len(logits2) == len(logits)
    assert max(abs(a - b) for a, b in zip(logits2, logits)) < 1e-4


def test_flop_model():
    h = 64
    assert resgate.module_flops("attention", h, 256, ctx=1) == 8 * h * h + 4 * h
    assert resgate.module_flops("mlp", h, 256) == 4 * h * 256
    assert resgate.module_flops("gate-linear-vector", h, 0) == 2 * h * h
