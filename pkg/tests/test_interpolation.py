import pytest
import torch

from vidcascade.data import ClipDataset, generate_synthetic_dataset
from vidcascade.diffusion import build_linear_schedule
from vidcascade.stages.interpolation import (
    build_interp_input,
    expanded_frame_count,
    interp_model_input,
    keyframe_indices,
    noise_aug,
    sample_interpolation,
    train_interpolation,
)

SCHED = build_linear_schedule(1000, 1e-4, 0.02)


def _keyframes(k=8, h=8, w=6, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(k, 3, h, w, generator=gen) * 2 - 1


def test_layout_for_eight_keyframes():
    kf = _keyframes()
    cond = build_interp_input(kf)
    assert cond.masked_rgb.shape == (29, 3, 8, 6)
    assert cond.mask.shape == (29, 1, 8, 6)
    assert keyframe_indices(8) == [0, 4, 8, 12, 16, 20, 24, 28]
    assert float(cond.mask.sum(dim=(1, 2, 3)).bool().long().sum()) == 8
    for i, src in zip(keyframe_indices(8), kf):
        assert torch.equal(cond.masked_rgb[i], src)
        assert bool((cond.mask[i] == 1).all())


def test_target_frames_are_zero():
    cond = build_interp_input(_keyframes())
    assert float(cond.masked_rgb[1].abs().max()) == 0.0
    assert float(cond.mask[1].abs().max()) == 0.0
    off = cond.mask == 0
    assert float((cond.masked_rgb * off).abs().max()) == 0.0


@pytest.mark.parametrize("k", range(2, 17))
def test_frame_arithmetic_property(k):
    # 4T - 3 frames; index map i -> 4i is a bijection onto the mask slots
    cond = build_interp_input(_keyframes(k=k))
    assert cond.masked_rgb.shape[0] == expanded_frame_count(k) == 4 * k - 3
    idx = keyframe_indices(k)
    assert len(set(idx)) == k and idx[-1] == 4 * k - 4
    on = cond.mask[:, 0, 0, 0] > 0
    assert on.nonzero().flatten().tolist() == idx


def test_wrong_keyframe_shapes_rejected():
    with pytest.raises(ValueError):
        build_interp_input(torch.zeros(8, 1, 4, 4))
    with pytest.raises(ValueError):
        build_interp_input(torch.zeros(1, 3, 4, 4))


# ---------------------------------------------------------------------------
# noise conditioning augmentation


def test_aug_level_zero_is_identity():
    cond = build_interp_input(_keyframes())
    rng = torch.Generator().manual_seed(0)
    out = noise_aug(cond, 0.0, SCHED, rng)
    assert torch.equal(out.masked_rgb, cond.masked_rgb)
    assert out.aug_level == 0.0


def test_aug_leaves_masked_out_frames_untouched():
    cond = build_interp_input(_keyframes())
    rng = torch.Generator().manual_seed(1)
    for level in (0.2, 1.0):
        out = noise_aug(cond, level, SCHED, rng)
        off = (cond.mask[:, 0, 0, 0] == 0).nonzero().flatten()
        assert torch.equal(out.masked_rgb[off], cond.masked_rgb[off])
        assert float(out.masked_rgb[off].abs().max()) == 0.0
        assert out.aug_level == level


def test_max_level_decorrelates_conditioning():
    # Monte-Carlo correlation oracle on dataset-like clips
    import tempfile

    with tempfile.TemporaryDirectory() as td:
        generate_synthetic_dataset(td, seed=3, n_clips=6, dims=(32, 20), frames=29)
        ds = ClipDataset(td)
        rng = torch.Generator().manual_seed(2)
        cors = []
        for i in range(len(ds)):
            clip, _ = ds[i]
            cond = build_interp_input(clip[::4])
            out = noise_aug(cond, 1.0, SCHED, rng)
            on = cond.mask[:, 0, 0, 0] > 0
            a = cond.masked_rgb[on].flatten()
            b = out.masked_rgb[on].flatten()
            cors.append(float(torch.corrcoef(torch.stack([a, b]))[0, 1]))
        assert sum(cors) / len(cors) < 0.5


def test_model_input_is_eq5_input_plus_channels():
    # with mask all-ones and z = x0, only the appended channels differ
    kf = _keyframes(k=2, h=4, w=4)
    cond = build_interp_input(kf)
    x_t = torch.randn(5, 3, 4, 4, generator=torch.Generator().manual_seed(3))
    merged = interp_model_input(x_t, cond)
    assert merged.shape == (5, 7, 4, 4)
    assert torch.equal(merged[:, :3], x_t)
    assert torch.equal(merged[:, 3:6], cond.masked_rgb)
    assert torch.equal(merged[:, 6:7], cond.mask)


def test_training_conditioning_integrity_enforced(tiny_cfg):
    # corrupt dataset clip would put nonzero rgb at masked-out slots only via
    # a broken builder; simulate by asserting the check itself
    from vidcascade.stages.interpolation import InterpolationInput, _check_conditioning

    good = build_interp_input(_keyframes())
    _check_conditioning(good)
    bad = InterpolationInput(
        masked_rgb=torch.ones_like(good.masked_rgb), mask=good.mask, aug_level=0.0
    )
    with pytest.raises(ValueError, match="integrity"):
        _check_conditioning(bad)


# ---------------------------------------------------------------------------
# training and sampling contracts (untrained, tiny)


def test_unet_gets_seven_channels(tiny_cfg):
    assert tiny_cfg.interpolation.unet.in_channels == 3 + 4 == 7


def test_sample_shape_and_determinism(tiny_interpolation_bundle, tiny_cfg):
    cfg = tiny_cfg.interpolation
    kf = _keyframes(k=8, h=cfg.height, w=cfg.width)
    out1 = sample_interpolation(kf, tiny_interpolation_bundle, torch.Generator().manual_seed(5))
    out2 = sample_interpolation(kf, tiny_interpolation_bundle, torch.Generator().manual_seed(5))
    assert out1.shape == (29, 3, cfg.height, cfg.width)
    assert torch.equal(out1, out2)
    assert float(out1.abs().max()) <= 1.0


def test_seeded_training_is_deterministic(tiny_cfg):
    from vidcascade.stages.common import init_stage_model

    cfg = tiny_cfg.interpolation
    curves = []
    for _ in range(2):
        data = random_clips_for(cfg)
        model = init_stage_model(cfg.unet, 0, "interpolation")
        bundle = train_interpolation(
            data, model, cfg, 8, torch.Generator().manual_seed(11), clip_index=0
        )
        curves.append(bundle.extras["loss_curve"])
    assert curves[0] == curves[1]


def random_clips_for(cfg):
    from tests.conftest import random_clips

    return random_clips(2, cfg.frames, cfg.height, cfg.width, seed=4)
