import numpy as np
import pytest
import torch

from xbodyid.model import (REGIONS, BodyIdNet, CheckpointError, FusionFFN, LoraConfig, ModelConfig, ModelError,
                           apply_lora, average_local, build_attention_mask, fuse, load_checkpoint, lora_parameters,
                           merge_lora, region_masks, save_checkpoint)
from xbodyid.model.lora import LoRALinear

from conftest import TINY
from gradcheck import central_difference, relative_error


@pytest.fixture(scope="module")
def full_model():
    torch.manual_seed(0)
    return BodyIdNet(ModelConfig(depth=1, n_classes=4)).eval()


def test_default_geometry(full_model):
    cfg = full_model.cfg
    assert cfg.n_patches == 192 and cfg.n_tokens == 196
    x = torch.randn(2, 3, 384, 128)
    assert full_model.tokens(x).shape == (2, 196, 768)
    with torch.no_grad():
        b = full_model(x)
    assert b.z_global.shape == (2, 768)
    assert b.z_final.shape == (2, 1536)


def test_wrong_image_size(full_model):
    with pytest.raises(ValueError, match="expected images"):
        full_model.tokens(torch.zeros(1, 3, 256, 128))


def test_zero_image_tokens(full_model):
    tok = full_model.tokens(torch.zeros(1, 3, 384, 128))[0]
    pos = full_model.pos_embed[0]
    bias = full_model.patch_embed.proj.bias
    torch.testing.assert_close(tok[4:], pos[4:] + bias, rtol=0, atol=1e-6)
    torch.testing.assert_close(tok[0], pos[0] + full_model.global_token[0, 0], rtol=0, atol=1e-6)


def test_forward_deterministic(full_model):
    x = torch.randn(1, 3, 384, 128)
    with torch.no_grad():
        a, b = full_model(x), full_model(x)
    for k in ("z_global", "z_face", "z_torso", "z_lower", "z_local", "z_final"):
        assert torch.equal(getattr(a, k), getattr(b, k))


def test_local_is_mean_of_regions_bitwise(tiny_cfg):
    torch.manual_seed(1)
    m = BodyIdNet(tiny_cfg).eval()
    with torch.no_grad():
        b = m(torch.randn(3, 3, 64, 32))
    assert torch.equal(b.z_local, (b.z_face + b.z_torso + b.z_lower) / 3)


def test_average_local_examples():
    v = torch.randn(5)
    torch.testing.assert_close(average_local(v, v, v), v)
    e = torch.eye(3)
    torch.testing.assert_close(average_local(e[0], e[1], e[2]), torch.full((3,), 1 / 3))
    a, b, c = np.random.default_rng(0).normal(size=(3, 7))
    got = average_local(*(torch.tensor(t) for t in (a, b, c))).numpy()
    expect = np.array([(a[i] + b[i] + c[i]) / 3 for i in range(7)])
    np.testing.assert_allclose(got, expect, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        average_local(torch.zeros(3), torch.zeros(3), torch.zeros(4))


def test_fuse_residual_and_dims():
    f = FusionFFN(1536)
    g, l = torch.randn(2, 768), torch.randn(2, 768)
    assert fuse(f, g, l).shape == (2, 1536)
    for p in f.parameters():
        torch.nn.init.zeros_(p)
    torch.testing.assert_close(fuse(f, g, l), torch.cat([g, l], -1))
    with pytest.raises(ValueError):
        fuse(f, g, torch.randn(2, 512))


def test_region_masks_partition():
    cfg = ModelConfig(depth=1)
    masks = region_masks(cfg)
    assert [m.region for m in masks] == list(REGIONS)
    sets = [m.patch_indices for m in masks]
    assert sum(len(s) for s in sets) == 192
    assert set().union(*sets) == set(range(192))
    assert len(sets[0]) == 4 * 8 and len(sets[1]) == 10 * 8 and len(sets[2]) == 10 * 8


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(image_height=380)
    with pytest.raises(ValueError):
        ModelConfig(embed_dim=100, heads=12)
    with pytest.raises(ValueError):
        ModelConfig(region_rows=((0, 4), (3, 14), (14, 24)))
    with pytest.raises(ValueError):
        ModelConfig(region_rows=((0, 4), (4, 13), (14, 24)))


def test_attention_mask_structure():
    cfg = ModelConfig(depth=1)
    m = build_attention_mask(cfg)
    assert m[0].all()
    face = sorted(region_masks(cfg)[0].patch_indices)
    row = m[1]
    expected = torch.zeros(196, dtype=torch.bool)
    expected[[0, 1]] = True
    expected[[i + 4 for i in face]] = True
    assert torch.equal(row, expected)
    iso = build_attention_mask(cfg, isolate_regions=True)
    assert not iso[1:, 0].any() and iso[0].all()


def _perturb_patch(x, cfg, patch_index, amount=3.0):
    gw = cfg.grid[1]
    r, c = divmod(patch_index, gw)
    p = cfg.patch_size
    y = x.clone()
    y[:, :, r * p:(r + 1) * p, c * p:(c + 1) * p] += amount
    return y


def test_region_locality(full_model):
    cfg = full_model.cfg
    torch.manual_seed(3)
    x = torch.randn(1, 3, 384, 128)
    masks = {m.region: m.patch_indices for m in region_masks(cfg)}
    outside_face = min(masks["lower"])
    inside_face = min(masks["face"])
    with torch.no_grad():
        base = full_model(x, isolate_regions=True)
        moved = full_model(_perturb_patch(x, cfg, outside_face), isolate_regions=True)
        torch.testing.assert_close(moved.z_face, base.z_face, rtol=0, atol=1e-6)
        torch.testing.assert_close(moved.z_torso, base.z_torso, rtol=0, atol=1e-6)
        assert not torch.allclose(moved.z_lower, base.z_lower)
        full = full_model(x)
        full_moved = full_model(_perturb_patch(x, cfg, inside_face))
    assert not torch.allclose(full_moved.z_face, full.z_face)


def test_uninitialized_raises(tiny_cfg):
    m = BodyIdNet(tiny_cfg, init=False)
    with pytest.raises(ModelError):
        m(torch.zeros(1, 3, 64, 32))


def test_region_subset_refusion(tiny_cfg):
    torch.manual_seed(2)
    m = BodyIdNet(tiny_cfg).eval()
    with torch.no_grad():
        b = m(torch.randn(2, 3, 64, 32))
        torch.testing.assert_close(m.refuse(b, REGIONS), b.z_final, rtol=0, atol=0)
        sub = m(torch.randn(2, 3, 64, 32) * 0 + 0.1, regions=("torso", "lower"))
        torch.testing.assert_close(sub.z_local, (sub.z_torso + sub.z_lower) / 2)


def test_z_final_gradients_match_finite_differences(tiny_cfg):
    torch.manual_seed(4)
    m = BodyIdNet(tiny_cfg).double().eval()
    x = torch.randn(2, 3, 64, 32, dtype=torch.float64, requires_grad=True)
    w = torch.randn(2, tiny_cfg.feature_dim, dtype=torch.float64)

    def scalar(inp):
        return (m(inp).z_final * w).sum()

    scalar(x).backward()
    coords = np.random.default_rng(0).choice(x.numel(), 25, replace=False)
    fd = central_difference(lambda t: scalar(t).item(), x, coords)
    assert relative_error(x.grad.view(-1)[coords].numpy(), fd) < 1e-4

    for name in ("blocks.0.attn.q.weight", "blocks.1.mlp.0.weight", "local_tokens", "fusion.fc1.weight"):
        p = dict(m.named_parameters())[name]
        m.zero_grad()
        scalar(x.detach()).backward()
        coords = np.random.default_rng(1).choice(p.numel(), 15, replace=False)
        fd = central_difference(lambda _: scalar(x.detach()).item(), p, coords)
        assert relative_error(p.grad.view(-1)[coords].numpy(), fd) < 1e-4, name


# LoRA

def test_lora_zero_init_equivalence(tiny_cfg):
    torch.manual_seed(5)
    m = BodyIdNet(tiny_cfg).eval()
    x = torch.randn(4, 3, 64, 32)
    with torch.no_grad():
        before = m(x).z_final.clone()
        apply_lora(m, LoraConfig(rank=4))
        after = m(x).z_final
    torch.testing.assert_close(after, before, rtol=0, atol=1e-6)


def test_lora_param_count(tiny_cfg):
    m = apply_lora(BodyIdNet(tiny_cfg), LoraConfig(rank=3))
    d = tiny_cfg.embed_dim
    n_mats = tiny_cfg.depth * 4
    assert sum(p.numel() for p in lora_parameters(m)) == n_mats * 2 * 3 * d
    for lin in (mod for mod in m.modules() if isinstance(mod, LoRALinear)):
        assert lin.lora_A.numel() + lin.lora_B.numel() == 2 * 3 * d
    trainable = [n for n, p in m.named_parameters() if p.requires_grad]
    assert trainable and all("lora_" in n for n in trainable)


def test_lora_merge_equivalence(tiny_cfg):
    torch.manual_seed(6)
    m = apply_lora(BodyIdNet(tiny_cfg).eval(), LoraConfig(rank=4, alpha=8))
    with torch.no_grad():
        for p in lora_parameters(m):
            p.normal_(0, 0.1)
        x = torch.randn(5, 3, 64, 32)
        adapted = m(x).z_final.clone()
        merged = merge_lora(m)
        assert not any(isinstance(mod, LoRALinear) for mod in merged.modules())
        torch.testing.assert_close(merged(x).z_final, adapted, rtol=0, atol=1e-5)


def test_lora_rank_too_large(tiny_cfg):
    with pytest.raises(ValueError):
        apply_lora(BodyIdNet(tiny_cfg), LoraConfig(rank=tiny_cfg.embed_dim))


def test_checkpoint_round_trip(tmp_path, tiny_cfg):
    torch.manual_seed(7)
    m = BodyIdNet(tiny_cfg).eval()
    x = torch.randn(2, 3, 64, 32)
    save_checkpoint(tmp_path / "m.pt", m)
    loaded, _ = load_checkpoint(tmp_path / "m.pt", expect_model=tiny_cfg)
    with torch.no_grad():
        assert torch.equal(loaded(x).z_final, m(x).z_final)
    other = ModelConfig(**{**TINY, "n_classes": 9})
    with pytest.raises(CheckpointError, match="mismatch"):
        load_checkpoint(tmp_path / "m.pt", expect_model=other)


def test_checkpoint_with_lora(tmp_path, tiny_cfg):
    torch.manual_seed(8)
    m = apply_lora(BodyIdNet(tiny_cfg).eval(), LoraConfig(rank=2))
    with torch.no_grad():
        for p in lora_parameters(m):
            p.normal_()
    save_checkpoint(tmp_path / "m.pt", m)
    loaded, _ = load_checkpoint(tmp_path / "m.pt", expect_lora=LoraConfig(rank=2))
    x = torch.randn(1, 3, 64, 32)
    with torch.no_grad():
        assert torch.equal(loaded(x).z_final, m(x).z_final)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.pt", expect_lora=LoraConfig(rank=3))


def test_region_rows_scale_with_grid():
    assert ModelConfig(depth=1).region_rows == ((0, 4), (4, 14), (14, 24))
    assert ModelConfig(depth=1, image_height=192, image_width=64).region_rows == ((0, 2), (2, 7), (7, 12))
    assert ModelConfig(**TINY).region_rows == ((0, 1), (1, 2), (2, 4))
