import pytest
import torch

from vidcascade.conditioning import (
    GuidanceConfig,
    ToyTextEmbedder,
    cfg_combine,
    cfg_dropout,
    embed_text,
    null_like,
)


def test_same_prompt_same_embedding():
    a = embed_text("a red square moving right")
    b = embed_text("a red square moving right")
    assert torch.equal(a.tokens, b.tokens)
    # a fresh embedder instance agrees too (process independence)
    c = ToyTextEmbedder().embed("a red square moving right")
    assert torch.equal(a.tokens, c.tokens)


def test_distinct_prompts_differ():
    a = embed_text("a red square moving right")
    b = embed_text("a blue circle moving left")
    assert float((a.tokens - b.tokens).norm()) > 0


def test_empty_prompt_rejected():
    with pytest.raises(ValueError):
        embed_text("")
    with pytest.raises(ValueError):
        embed_text("   ")


def test_embedding_shape_and_padding():
    emb = ToyTextEmbedder(dim=32, length=6).embed("two words")
    assert emb.tokens.shape == (6, 32)
    assert float(emb.tokens[2:].abs().max()) == 0.0  # padded slots are zero
    assert not emb.is_null


def test_null_embedding_is_zero():
    embedder = ToyTextEmbedder()
    null = embedder.null()
    assert null.is_null
    assert float(null.tokens.abs().max()) == 0.0
    assert null.tokens.shape == (embedder.length, embedder.dim)


def test_build_seed_changes_embedding():
    a = ToyTextEmbedder(seed=0).embed("hello world")
    b = ToyTextEmbedder(seed=1).embed("hello world")
    assert float((a.tokens - b.tokens).norm()) > 0


# ---------------------------------------------------------------------------
# classifier-free dropout


def test_dropout_p0_keeps_embedding():
    rng = torch.Generator().manual_seed(0)
    emb = embed_text("hello")
    for _ in range(50):
        assert cfg_dropout(emb, 0.0, rng) is emb


def test_dropout_p1_always_null():
    rng = torch.Generator().manual_seed(0)
    emb = embed_text("hello")
    for _ in range(50):
        assert cfg_dropout(emb, 1.0, rng).is_null


def test_dropout_frequency_matches_binomial():
    rng = torch.Generator().manual_seed(123)
    emb = embed_text("hello")
    n = 10_000
    dropped = sum(cfg_dropout(emb, 0.1, rng).is_null for _ in range(n))
    assert 0.08 <= dropped / n <= 0.12  # 3 sigma of Binomial(1e4, 0.1) is ~0.009


def test_dropout_validates_probability():
    rng = torch.Generator().manual_seed(0)
    with pytest.raises(ValueError):
        cfg_dropout(embed_text("x"), 1.5, rng)


# ---------------------------------------------------------------------------
# guidance combination


def test_scale_one_returns_cond_exactly():
    gen = torch.Generator().manual_seed(1)
    u, c = torch.randn(3, 4, generator=gen), torch.randn(3, 4, generator=gen)
    assert torch.equal(cfg_combine(u, c, 1.0), c)


def test_equal_predictions_unchanged_by_scale():
    x = torch.randn(3, 4, generator=torch.Generator().manual_seed(2))
    for scale in (1.0, 2.0, 7.5):
        assert torch.allclose(cfg_combine(x, x, scale), x, atol=1e-12)


def test_scale_two_from_zero_uncond_doubles():
    x = torch.randn(3, 4, generator=torch.Generator().manual_seed(3))
    assert torch.allclose(cfg_combine(torch.zeros_like(x), x, 2.0), 2 * x, atol=1e-12)


@pytest.mark.parametrize("scale", [1.0, 1.5, 3.0, 7.5])
def test_combine_is_affine_in_scale(scale):
    gen = torch.Generator().manual_seed(4)
    u, c = torch.randn(5, generator=gen), torch.randn(5, generator=gen)
    want = u + scale * (c - u)
    assert torch.allclose(cfg_combine(u, c, scale), want, atol=1e-12)


def test_combine_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        cfg_combine(torch.zeros(2), torch.zeros(3), 2.0)


def test_guidance_config_validation():
    GuidanceConfig(p_drop=0.1, guidance_scale=7.5)
    with pytest.raises(ValueError):
        GuidanceConfig(p_drop=-0.1)
    with pytest.raises(ValueError):
        GuidanceConfig(guidance_scale=0.5)


def test_null_like_preserves_shape():
    emb = ToyTextEmbedder(dim=48, length=3).embed("a b c")
    null = null_like(emb)
    assert null.tokens.shape == emb.tokens.shape and null.is_null
