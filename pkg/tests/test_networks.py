import pytest
import torch

from cycledeblur.networks import (Identity, InstanceNorm, ShapeError, build_discriminator, build_generator,
                                  discriminator_forward, expected_unet_names, generator_forward, instance_normalize,
                                  parameter_names, receptive_field)
from helpers import directional_gradcheck


def test_unet_name_set_matches_schedule():
    g = build_generator("unet", 0, base_channels=8)
    assert set(parameter_names(g)) == set(expected_unet_names(8))
    assert g.channels == [8, 16, 32, 64, 64, 64, 64, 64]
    full = build_generator("unet", 0)
    assert [full.__getattr__(f"enc{i}")[0].out_channels for i in range(1, 9)] == \
        [64, 128, 256, 512, 512, 512, 512, 512]


def test_unet_stage_layout():
    g = build_generator("unet", 0, base_channels=8)
    conv = g.enc1[0]
    assert conv.kernel_size == (4, 4) and conv.stride == (2, 2)
    assert isinstance(g.enc1[2], torch.nn.LeakyReLU) and g.enc1[2].negative_slope == 0.2
    assert isinstance(g.dec3[2], torch.nn.ReLU)
    assert not any(isinstance(m, torch.nn.Dropout) for m in g.modules())
    assert isinstance(g.out[1], torch.nn.Tanh)


def test_resblock_has_nine_conv_pairs():
    g = build_generator("resblock", 0, base_channels=8)
    names = parameter_names(g)
    groups = {n.split(".")[0] for n in names if n.startswith("res") and n.endswith(".weight")
              and n.split(".")[1] in ("0", "3")}
    assert groups == {f"res{k}" for k in range(1, 10)}
    for k in range(1, 10):
        assert f"res{k}.0.weight" in names and f"res{k}.3.weight" in names
    assert g.head[0].kernel_size == (7, 7) and g.tail[0].kernel_size == (7, 7)


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown generator"):
        build_generator("vae")


def test_same_seed_same_init():
    a = build_generator("unet", 5, base_channels=8).state_dict()
    b = build_generator("unet", 5, base_channels=8).state_dict()
    c = build_generator("unet", 6, base_channels=8).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_init_statistics():
    g = build_generator("unet", 1)
    w = g.enc4[0].weight.detach().double()
    assert abs(float(w.mean())) < 1e-3 and abs(float(w.std()) - 0.02) < 5e-4
    assert torch.all(g.enc4[0].bias == 0)
    assert torch.all(g.enc4[1].scale == 1) and torch.all(g.enc4[1].shift == 0)


@pytest.mark.parametrize("kind,size", [("unet", 256), ("resblock", 64)])
def test_generator_shape_and_range(kind, size):
    g = build_generator(kind, 0, base_channels=8, n_blocks=2)
    x = torch.rand(2, 3, size, size) * 2 - 1
    with torch.no_grad():
        y = generator_forward(g, x)
        y2 = generator_forward(g, x)
    assert y.shape == x.shape
    assert float(y.abs().max()) <= 1.0
    assert torch.equal(y, y2)


def test_generator_divisibility_error():
    g = build_generator("unet", 0, base_channels=4)
    with pytest.raises(ShapeError, match="256"):
        generator_forward(g, torch.zeros(1, 3, 128, 128))
    r = build_generator("resblock", 0, base_channels=4, n_blocks=1)
    with pytest.raises(ShapeError, match="4"):
        generator_forward(r, torch.zeros(1, 3, 30, 30))


def test_discriminator_map_and_receptive_field():
    d = build_discriminator(0, base_channels=8)
    with torch.no_grad():
        out = discriminator_forward(d, torch.zeros(2, 3, 256, 256))
    assert out.shape == (2, 1, 30, 30)
    assert d.receptive_field == 70 == receptive_field([4] * 5, [2, 2, 2, 1, 1])
    assert d.output_size(256) == 30
    assert not isinstance(list(d.out.children())[-1], torch.nn.Sigmoid)
    assert [getattr(d, f"c{n}")[0].out_channels for n in range(1, 5)] == [8, 16, 32, 64]
    with pytest.raises(ShapeError, match="70"):
        discriminator_forward(d, torch.zeros(1, 3, 64, 64))


def test_receptive_field_brute_force():
    # RF as the support of the output-centre gradient; instance norm pools
    # statistics over the whole map, so it is taken out for this probe
    d = build_discriminator(3, base_channels=4, dtype=torch.float64)
    for n in range(2, 5):
        getattr(d, f"c{n}")[1] = Identity()
    with torch.no_grad():
        for p in d.parameters():
            if p.ndim == 4:
                p.copy_(p.abs() + 0.01)
    x = torch.zeros(1, 3, 160, 160, dtype=torch.float64, requires_grad=True)
    out = d(x)
    out[0, 0, 8, 8].backward()
    rows = torch.nonzero(x.grad[0].abs().sum(0).sum(1)).flatten()
    assert int(rows.max() - rows.min() + 1) == 70


def _patch_input(shift, size=320):
    # content far enough from the border that no receptive field sees both
    gen = torch.Generator().manual_seed(0)
    x = torch.zeros(1, 3, size, size, dtype=torch.float64)
    x[:, :, 130 + shift:170 + shift, 130 + shift:170 + shift] = torch.rand(1, 3, 40, 40, generator=gen, dtype=torch.float64)
    return x


@pytest.mark.parametrize("n_layers,shift", [(1, 2), (3, 8)])
def test_discriminator_translation_covariance(n_layers, shift):
    # content on a zero background so instance-norm statistics are shift invariant
    d = build_discriminator(1, n_layers=n_layers, base_channels=4, dtype=torch.float64)
    with torch.no_grad():
        a = d(_patch_input(0))[0, 0]
        b = d(_patch_input(shift))[0, 0]
    # zero padding meets a nonzero post-norm background, so skip a border band
    m = 6
    assert torch.max(torch.abs(b[m + 1:-m, m + 1:-m] - a[m:-m - 1, m:-m - 1])) <= 1e-5
    # and the map is not trivially flat
    assert float(a.std()) > 1e-3


def test_skip_connections_carry_signal():
    g = build_generator("unet", 2, depth=4, base_channels=4, dtype=torch.float64)
    with torch.no_grad():
        for j in range(2, 4):
            conv = getattr(g, f"dec{j}")[0]
            conv.weight[:conv.weight.shape[0] // 2] = 0
        g.out[0].weight[:g.out[0].weight.shape[0] // 2] = 0
        g.dec1[0].weight.zero_()
        y1 = g(torch.rand(1, 3, 16, 16, dtype=torch.float64))
        y2 = g(torch.rand(1, 3, 16, 16, dtype=torch.float64))
    assert torch.max(torch.abs(y1 - y2)) > 1e-6

    r = build_generator("resblock", 2, n_blocks=1, base_channels=4, dtype=torch.float64)
    with torch.no_grad():
        r.up1[0].weight.zero_()
        z1 = r(torch.rand(1, 3, 16, 16, dtype=torch.float64))
        z2 = r(torch.rand(1, 3, 16, 16, dtype=torch.float64))
    assert torch.max(torch.abs(z1 - z2)) < 1e-12


def test_instance_norm_cases():
    x = torch.full((1, 1, 4, 4), 3.0)
    assert torch.all(instance_normalize(x) == 0)
    y = instance_normalize(torch.tensor([1.0, 3.0], dtype=torch.float64).view(1, 1, 1, 2))
    assert torch.allclose(y.flatten(), torch.tensor([-1.0, 1.0], dtype=torch.float64), atol=1e-5)
    gen = torch.Generator().manual_seed(1)
    x = torch.randn(3, 5, 9, 7, generator=gen, dtype=torch.float64) * 4 + 2
    out = InstanceNorm(5).double()(x)
    assert out.mean(dim=(2, 3)).abs().max() <= 1e-5
    assert (out.var(dim=(2, 3), unbiased=False) - 1).abs().max() <= 1e-3
    with pytest.raises(ValueError):
        InstanceNorm(3, eps=0)


def test_instance_norm_matches_torch():
    gen = torch.Generator().manual_seed(2)
    x = torch.randn(2, 4, 6, 6, generator=gen, dtype=torch.float64)
    ref = torch.nn.functional.instance_norm(x, eps=1e-5)
    assert torch.allclose(instance_normalize(x), ref, atol=1e-12)


@pytest.mark.parametrize("which", ["unet", "resblock", "disc"])
def test_gradients_match_finite_differences(which):
    torch.manual_seed(0)
    if which == "unet":
        net = build_generator("unet", 3, depth=4, base_channels=4, dtype=torch.float64)
    elif which == "resblock":
        net = build_generator("resblock", 3, n_blocks=2, base_channels=4, dtype=torch.float64)
    else:
        net = build_discriminator(3, n_layers=1, base_channels=4, dtype=torch.float64)
    x = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(4), dtype=torch.float64) * 2 - 1
    worst, checked = directional_gradcheck(net, x)
    assert checked > 5
    assert worst <= 1e-4
