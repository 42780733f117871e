"""Smoke test for the pyhazeforge extension module.

Build and install the module first:

    cd crates/python && maturin develop --release

then run `python python/smoke_test.py` (or `pytest python/smoke_test.py`).
"""

import random
import tempfile
from pathlib import Path

import numpy as np

import pyhazeforge as hf


def random_image(rng, w, h, lo=0.0, hi=1.0):
    return hf.Image(w, h, 3, [rng.uniform(lo, hi) for _ in range(w * h * 3)])


def test_matting_laplacian():
    rng = random.Random(0)
    img = random_image(rng, 8, 8)
    m = hf.MattingLaplacian(img)
    assert m.dim == 64
    dense = np.array(m.to_dense())
    assert np.abs(dense - dense.T).max() < 1e-12
    assert np.abs(dense.sum(axis=1)).max() < 1e-8
    assert np.linalg.eigvalsh(dense).min() > -1e-8
    v = np.array(img.data()).reshape(64, 3)
    energy = sum(v[:, c] @ dense @ v[:, c] for c in range(3))
    assert abs(m.energy(img) - energy) <= 1e-9 * max(1.0, energy)


def test_haze_round_trip():
    rng = random.Random(1)
    clean = random_image(rng, 12, 9, 0.1, 0.9)
    t = [rng.uniform(0.1, 1.0) for _ in range(12 * 9)]
    hazy = hf.add_haze(clean, t, 0.85)
    back = hf.invert_haze(hazy, t, 0.85)
    assert np.abs(np.array(back.data()) - np.array(clean.data())).max() < 1e-5


def test_refine_constant_depth():
    rng = random.Random(2)
    guide = random_image(rng, 10, 10)
    out = hf.refine_depth([0.6] * 100, guide)
    assert max(abs(d - 0.6) for d in out) < 1e-6


def test_metrics():
    rng = random.Random(3)
    a = random_image(rng, 16, 16)
    assert abs(hf.ssim(a, a) - 1.0) < 1e-9
    b = hf.Image(10, 10, 3, [0.625 if i < 192 else 0.5 for i in range(300)])
    flat = hf.Image(10, 10, 3, [0.5] * 300)
    assert abs(hf.psnr(flat, b) - 20.0) < 1e-9


def test_config():
    cfg = hf.Config("seed = 4\nlambda2 = 0\n")
    assert cfg.get("seed") == "4"
    cfg.set("iterations", "12")
    assert hf.Config(cfg.dump()).dump() == cfg.dump()
    try:
        cfg.set("no_such_key", "1")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")


def test_train_dehaze_and_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = hf.Config()
        for key, value in [("seed", "1"), ("base_channels", "4"), ("num_residual_blocks", "1"),
                           ("iterations", "4"), ("checkpoint_every", "0")]:
            cfg.set(key, value)
        hf.toy_dataset(tmp / "data", cfg)
        cfg.set("data_dir", str(tmp / "data"))
        hashes = []
        for run in ("a", "b"):
            cfg.set("out_dir", str(tmp / run))
            final = hf.train(cfg)
            hashes.append(hf.checkpoint_hash(final))
        assert hashes[0] == hashes[1]
        ck = hf.Checkpoint.load(final)
        assert ck.iteration == 4
        hazy = hf.Image.read(sorted((tmp / "data/test/hazy").iterdir())[0])
        out = ck.dehaze(hazy)
        assert (out.width, out.height, out.channels) == (hazy.width, hazy.height, 3)
        assert all(0.0 <= v <= 1.0 for v in out.data())


def test_gradcheck():
    passed, lines = hf.gradcheck(0)
    assert passed, "\n".join(lines)


if __name__ == "__main__":
    tests = [(name, fn) for name, fn in sorted(globals().items()) if name.startswith("test_")]
    for name, fn in tests:
        fn()
        print(f"ok  {name}")
    print(f"{len(tests)} checks passed")
