import pytest
import torch

from vidcascade.conditioning import embed_text
from vidcascade.unet import (
    AttentionBlock,
    ResBlock2D,
    TemporalAttention,
    TemporalConvBlock,
    UNetConfig,
    VideoUNet,
    build_video_unet,
    timestep_embedding,
)

TOY = UNetConfig(
    in_channels=3,
    out_channels=3,
    base_channels=32,
    depth=3,
    channel_multipliers=(1, 2, 4),
    head_channels=8,
    cross_attention_dim=64,
)
EMB = embed_text("a red square moving right")


def fresh(cfg=TOY, seed=0):
    torch.manual_seed(seed)
    return build_video_unet(cfg)


# ---------------------------------------------------------------------------
# shape and config contracts


def test_shape_contract_keyframe_toy():
    model = fresh()
    x = torch.randn(8, 3, 32, 20)
    with torch.no_grad():
        out = model(x, 500, EMB)
    assert out.shape == (8, 3, 32, 20)


def test_extra_cond_channels_make_in_seven():
    cfg = UNetConfig(
        in_channels=7,
        out_channels=3,
        extra_cond_channels=4,
        scalar_cond=True,
        base_channels=16,
        depth=2,
        channel_multipliers=(1, 2),
        head_channels=8,
        cross_attention_dim=64,
    )
    assert cfg.in_channels == cfg.out_channels + cfg.extra_cond_channels == 7
    model = fresh(cfg)
    with torch.no_grad():
        out = model(torch.randn(4, 7, 8, 8), 10, EMB, scalar=0.3)
    assert out.shape == (4, 3, 8, 8)


def test_first_sr_shape_accepted():
    cfg = UNetConfig(
        in_channels=6,
        out_channels=3,
        extra_cond_channels=3,
        scalar_cond=True,
        base_channels=8,
        depth=5,
        channel_multipliers=(1, 2, 4, 6, 6),
        head_channels=8,
        cross_attention_dim=64,
    )
    model = fresh(cfg)
    with torch.no_grad():
        out = model(torch.randn(2, 6, 32, 16), 3, EMB, scalar=2.0)
    assert out.shape == (2, 3, 32, 16)


@pytest.mark.parametrize(
    "kw",
    [
        dict(depth=3, channel_multipliers=(1, 2)),
        dict(in_channels=5, out_channels=3, extra_cond_channels=3),
        dict(extra_cond_channels=2, in_channels=5),
        dict(head_channels=24),
        dict(attention_levels=(7,)),
    ],
)
def test_invalid_configs_rejected(kw):
    base = dict(
        in_channels=3,
        out_channels=3,
        base_channels=32,
        depth=3,
        channel_multipliers=(1, 2, 4),
        head_channels=8,
        cross_attention_dim=64,
    )
    base.update(kw)
    with pytest.raises(ValueError):
        UNetConfig(**base)


def test_forward_input_validation():
    model = fresh()
    with pytest.raises(ValueError, match="input channels"):
        model(torch.randn(2, 4, 32, 20), 1, EMB)
    with pytest.raises(ValueError, match="divisible"):
        model(torch.randn(2, 3, 30, 20), 1, EMB)
    with pytest.raises(ValueError, match="scalar"):
        model(torch.randn(2, 3, 32, 20), 1, EMB, scalar=1.0)
    with pytest.raises(ValueError, match="cross_attention_dim"):
        model(torch.randn(2, 3, 32, 20), 1, torch.randn(4, 32))


# ---------------------------------------------------------------------------
# layer placement


def _count(model, cls):
    return sum(1 for m in model.modules() if isinstance(m, cls))


def test_every_res_block_has_one_temporal_conv():
    cfg = UNetConfig(
        base_channels=16,
        depth=4,
        channel_multipliers=(1, 2, 4, 4),
        head_channels=8,
        cross_attention_dim=64,
    )
    model = fresh(cfg)
    assert len(model.down_levels) == 4  # four resolution levels
    n_res = _count(model, ResBlock2D)
    n_tc = _count(model, TemporalConvBlock)
    assert n_res == n_tc == 2 * cfg.depth + 2


def test_every_attention_pair_has_one_temporal_attention():
    model = fresh()
    n_pairs = _count(model, AttentionBlock)
    n_tattn = _count(model, TemporalAttention)
    assert n_pairs == n_tattn
    # attention at levels 1 and 2, down and up, plus the middle block
    assert n_pairs == 2 * 2 + 1


def test_temporal_conv_block_is_four_convs():
    block = TemporalConvBlock(16)
    assert len(block.convs) == 4
    assert all(c.kernel_size == (3,) for c in block.convs)


def test_temporal_output_projections_zero_initialized():
    model = fresh()
    for mod in model.modules():
        if isinstance(mod, TemporalConvBlock):
            assert float(mod.convs[-1].weight.abs().max()) == 0.0
        if isinstance(mod, TemporalAttention):
            assert float(mod.proj.weight.abs().max()) == 0.0


# ---------------------------------------------------------------------------
# identity at init / temporal behaviour


def test_identity_at_init_video_equals_2d_path():
    model = fresh(seed=3)
    x = torch.randn(8, 3, 32, 20)
    with torch.no_grad():
        video = model(x, 500, EMB)
        flat = model(x, 500, EMB, temporal="none")
    assert float((video - flat).abs().max()) < 1e-6


def test_identity_at_init_video_equals_per_frame_inference():
    model = fresh(seed=4)
    x = torch.randn(8, 3, 32, 20)
    with torch.no_grad():
        video = model(x, 123, EMB)
        frames = torch.stack([model(x[i : i + 1], 123, EMB)[0] for i in range(8)])
    assert float((video - frames).abs().max()) < 1e-6


def test_batch_equivariance():
    model = fresh(seed=5)
    clips = torch.randn(2, 4, 3, 16, 8)
    emb = EMB.tokens[None].expand(2, -1, -1)
    with torch.no_grad():
        out = model(clips, 77, emb)
        swapped = model(clips.flip(0), 77, emb)
    assert torch.equal(out.flip(0), swapped)


def _unlock_output(model, gen):
    # the output conv is zero-initialized by design; sensitivity tests need a
    # live output path
    with torch.no_grad():
        model.out_conv.weight.normal_(0, 0.05, generator=gen)


def test_temporal_conv_block_receptive_field_is_plus_minus_four():
    gen = torch.Generator().manual_seed(0)
    block = TemporalConvBlock(8)
    with torch.no_grad():
        for conv in block.convs:
            conv.weight.normal_(0, 0.3, generator=gen)
    x = torch.randn(1, 16, 8, 2, 2, generator=gen)
    bumped = x.clone()
    bumped[0, 8] += 1.0
    with torch.no_grad():
        delta = (block(x) - block(bumped)).abs().amax(dim=(2, 3, 4))[0]
    assert float(delta[8]) > 0
    touched = (delta > 0).nonzero().flatten().tolist()
    assert min(touched) >= 8 - 4 and max(touched) <= 8 + 4


def test_temporal_locality_through_the_model():
    # with a single live temporal stack (the rest stay zero-initialized
    # pass-throughs) and temporal attention disabled, a frame perturbation
    # cannot travel further than that stack's +/-4 horizon
    model = fresh(seed=6)
    gen = torch.Generator().manual_seed(1)
    _unlock_output(model, gen)
    with torch.no_grad():
        for conv in model.down_levels[0].temporal_conv.convs:
            conv.weight.normal_(0, 0.2, generator=gen)
    x = torch.randn(16, 3, 8, 8, generator=gen)
    bumped = x.clone()
    bumped[8] += 1.0
    with torch.no_grad():
        a = model(x, 9, EMB, temporal="conv_only")
        b = model(bumped, 9, EMB, temporal="conv_only")
    delta = (a - b).abs().amax(dim=(1, 2, 3))
    assert float(delta[8]) > 0
    touched = (delta > 0).nonzero().flatten().tolist()
    assert min(touched) >= 8 - 4 and max(touched) <= 8 + 4


def test_cross_attention_conditioning_changes_output():
    model = fresh(seed=7)
    _unlock_output(model, torch.Generator().manual_seed(2))
    x = torch.randn(4, 3, 16, 8)
    emb_a = embed_text("a red square moving right")
    emb_b = embed_text("a blue circle moving left")
    with torch.no_grad():
        out_a = model(x, 42, emb_a)
        out_b = model(x, 42, emb_b)
        out_a2 = model(x, 42, emb_a)
    assert float((out_a - out_b).abs().max()) > 0
    assert torch.equal(out_a, out_a2)


def test_scalar_conditioning_changes_output():
    cfg = UNetConfig(
        in_channels=6,
        out_channels=3,
        extra_cond_channels=3,
        scalar_cond=True,
        base_channels=16,
        depth=2,
        channel_multipliers=(1, 2),
        head_channels=8,
        cross_attention_dim=64,
    )
    model = fresh(cfg, seed=8)
    _unlock_output(model, torch.Generator().manual_seed(3))
    x = torch.randn(2, 6, 8, 8)
    with torch.no_grad():
        a = model(x, 5, EMB, scalar=1.0)
        b = model(x, 5, EMB, scalar=10.0)
    assert float((a - b).abs().max()) > 0


def test_max_frames_enforced():
    cfg = UNetConfig(
        base_channels=16,
        depth=2,
        channel_multipliers=(1, 2),
        head_channels=8,
        cross_attention_dim=64,
        max_frames=4,
    )
    model = fresh(cfg)
    with pytest.raises(ValueError, match="max_frames"):
        model(torch.randn(6, 3, 8, 8), 1, EMB)


# ---------------------------------------------------------------------------
# timestep embedding


def test_timestep_embedding_t0():
    emb = timestep_embedding(0, 16)
    assert torch.equal(emb[:8], torch.zeros(8))
    assert torch.equal(emb[8:], torch.ones(8))


def test_timestep_embedding_deterministic_and_distinct():
    assert torch.equal(timestep_embedding(7, 32), timestep_embedding(7, 32))
    assert float((timestep_embedding(1, 32) - timestep_embedding(2, 32)).norm()) > 0


def test_timestep_embedding_batched():
    emb = timestep_embedding(torch.tensor([0.0, 5.0]), 16)
    assert emb.shape == (2, 16)
    assert torch.equal(emb[0], timestep_embedding(0, 16))
