import json

import numpy as np
import pytest
import torch

from cycledeblur.blur import kernel_from_text
from cycledeblur.data import (ArrayPairs, DataError, Manifest, ManifestPairs, PairRecord, SynthConfig,
                              build_manifest, epoch_order, epoch_seed, iterate_batches, list_images,
                              make_toy_images, make_toy_pairs, split_manifest)
from cycledeblur.image import load_image, save_image


def synth(sharp_dir, out, seed=7, size=32, ks=9):
    return build_manifest(sharp_dir, out, synth_cfg=SynthConfig(kernel_size=ks, image_size=size, seed=seed))


def test_synthesis_writes_layout(sharp_dir, tmp_path):
    m = synth(sharp_dir, tmp_path / "ds")
    assert len(m.records) == 6
    for sub in ("sharp", "blur", "kernels"):
        assert len(list((tmp_path / "ds" / sub).glob("*.png"))) == 6
    rec = m.records[0]
    assert load_image(m.resolve(rec.blur_path)).shape == (32, 32, 3)
    k = kernel_from_text((tmp_path / "ds" / "kernels" / f"{rec.stem}.txt").read_text())
    assert k.shape == (9, 9) and abs(k.sum() - 1) < 1e-6
    header = json.loads((tmp_path / "ds" / "manifest.jsonl").read_text().splitlines()[0])
    assert header["kind"] == "header" and header["image_size"] == 32 and "synth_config_hash" in header


def test_synthesis_is_deterministic(sharp_dir, tmp_path):
    a = synth(sharp_dir, tmp_path / "a")
    b = synth(sharp_dir, tmp_path / "b")
    c = synth(sharp_dir, tmp_path / "c", seed=8)
    assert a.digest() == b.digest() != c.digest()
    blur_a = load_image(a.resolve(a.records[2].blur_path))
    blur_b = load_image(b.resolve(b.records[2].blur_path))
    assert np.array_equal(blur_a, blur_b)


def test_paired_mode_pairs_by_stem(tmp_path):
    for d in ("s", "b"):
        (tmp_path / d).mkdir()
    imgs = make_toy_images(3, 16, seed=1)
    for name, img in zip(("c", "a", "b"), imgs):
        save_image(img, tmp_path / "s" / f"{name}.png")
        save_image(img * 0.5, tmp_path / "b" / f"{name}.png")
    m = build_manifest(tmp_path / "s", tmp_path, blur_dir=tmp_path / "b")
    assert [r.stem for r in m.records] == ["a", "b", "c"]
    for r in m.records:
        assert r.blur_path == f"b/{r.stem}.png" and r.sharp_path == f"s/{r.stem}.png"
    (tmp_path / "s" / "d.png").write_bytes((tmp_path / "s" / "a.png").read_bytes())
    with pytest.raises(DataError, match="d"):
        build_manifest(tmp_path / "s", tmp_path, blur_dir=tmp_path / "b")


def test_empty_dir_and_collisions(tmp_path):
    (tmp_path / "e").mkdir()
    with pytest.raises(DataError, match="no images"):
        build_manifest(tmp_path / "e", tmp_path / "o", synth_cfg=SynthConfig())
    (tmp_path / "c").mkdir()
    img = make_toy_images(1, 8)[0]
    save_image(img, tmp_path / "c" / "x.png")
    save_image(img, tmp_path / "c" / "x.jpg")
    with pytest.raises(DataError, match="collision"):
        list_images(tmp_path / "c")


def test_manifest_round_trip_and_validation(sharp_dir, tmp_path):
    m = synth(sharp_dir, tmp_path / "ds")
    back = Manifest.load(tmp_path / "ds" / "manifest.jsonl")
    assert back.records == m.records and back.digest() == m.digest()
    with pytest.raises(DataError, match="duplicate"):
        Manifest([PairRecord("b.png", "s.png"), PairRecord("b.png", "t.png")])
    with pytest.raises(DataError):
        PairRecord("x.png", "x.png")
    with pytest.raises(DataError):
        PairRecord("x.png", "y.png", split="val")
    lines = (tmp_path / "ds" / "manifest.jsonl").read_text().splitlines()
    (tmp_path / "bad.jsonl").write_text("\n".join(lines[1:]))
    with pytest.raises(DataError, match="header"):
        Manifest.load(tmp_path / "bad.jsonl")
    hdr = json.loads(lines[0])
    hdr["counts"]["train"] = 99
    (tmp_path / "bad2.jsonl").write_text("\n".join([json.dumps(hdr)] + lines[1:]))
    with pytest.raises(DataError, match="counts"):
        Manifest.load(tmp_path / "bad2.jsonl")


def _records(n):
    return Manifest([PairRecord(f"b/{i}.png", f"s/{i}.png") for i in range(n)])


def test_split_sizes_and_determinism():
    m = _records(10_100)
    s = split_manifest(m, 10_000, 100, seed=3)
    assert s.counts() == {"train": 10_000, "test": 100}
    assert s.digest() == split_manifest(m, 10_000, 100, seed=3).digest()
    assert s.digest() != split_manifest(m, 10_000, 100, seed=4).digest()
    train = {r.blur_path for r in s.subset("train")}
    test = {r.blur_path for r in s.subset("test")}
    assert not train & test and train | test <= {r.blur_path for r in m.records}
    assert split_manifest(_records(5), 5, 0, 0).counts() == {"train": 5, "test": 0}
    with pytest.raises(DataError):
        split_manifest(_records(5), 4, 2, 0)


def test_epoch_orders():
    a = epoch_order(20, epoch_seed(1, 0))
    assert np.array_equal(a, epoch_order(20, epoch_seed(1, 0)))
    b = epoch_order(20, epoch_seed(1, 1))
    assert not np.array_equal(a, b) and sorted(a) == sorted(b) == list(range(20))


def _saved(tmp_path, n, sharp_dir=None):
    d = tmp_path / f"src{n}"
    d.mkdir()
    for i, img in enumerate(make_toy_images(n, 24, seed=n)):
        save_image(img, d / f"p{i}.png")
    return synth(d, tmp_path / f"ds{n}", size=16, ks=5)


@pytest.mark.parametrize("n,expected", [(4, 2), (5, 2)])
def test_iterate_batches_drops_partial(tmp_path, n, expected):
    m = _saved(tmp_path, n)
    batches = list(iterate_batches(m, "train", 2, epoch_seed(0, 0)))
    assert len(batches) == expected
    for b in batches:
        assert b.blur.shape == (2, 3, 16, 16) and b.sharp.shape == (2, 3, 16, 16)
        assert float(b.blur.min()) >= -1 and float(b.blur.max()) <= 1


def test_batches_pair_each_blur_with_its_sharp(tmp_path):
    m = _saved(tmp_path, 4)
    for batch in iterate_batches(m, "train", 2, epoch_seed(5, 2)):
        for k, name in enumerate(batch.names):
            rec = next(r for r in m.records if r.stem == name)
            sharp = torch.from_numpy(load_image(m.resolve(rec.sharp_path)).transpose(2, 0, 1)) * 2 - 1
            assert torch.allclose(batch.sharp[k].double(), sharp, atol=1e-6)
            assert rec.blur_path.endswith(f"{name}.png")


def test_unreadable_record_is_named(tmp_path):
    m = _saved(tmp_path, 4)
    victim = m.records[1]
    open(m.resolve(victim.blur_path), "wb").write(b"garbage")
    with pytest.raises(DataError, match=victim.source_id):
        ManifestPairs(m, "train").batch([0, 1])


def test_manifest_pairs_resize_and_empty_split(tmp_path):
    m = _saved(tmp_path, 4)
    blur, sharp = ManifestPairs(m, "train", size=8).batch([0])
    assert blur.shape == (1, 3, 8, 8)
    with pytest.raises(DataError, match="empty"):
        ManifestPairs(m, "test")


def test_toy_pairs():
    a = make_toy_pairs(4, 32, seed=3)
    b = make_toy_pairs(4, 32, seed=3)
    assert len(a) == 4 and all(np.array_equal(x, y) for x, y in zip(a.blur, b.blur))
    assert not np.array_equal(a.blur[0], a.sharp[0])
    blur, sharp = a.batch([2, 0], torch.float64)
    assert blur.dtype == torch.float64 and blur.shape == (2, 3, 32, 32)
    with pytest.raises(DataError):
        ArrayPairs([a.blur[0]], [])
