import subprocess
from pathlib import Path

import numpy as np
import pytest

import fgfp


def test_gl_trinomial_half_order():
    assert fgfp.gl_trinomial(0.5) == pytest.approx([1.0, -0.5, -0.125], abs=1e-12)
    assert fgfp.gl_trinomial(0.0) == pytest.approx([1.0, 0.0, 0.0], abs=1e-12)


def test_param_counts():
    assert fgfp.param_count("3d", (16, 3, 3)) == 7
    assert fgfp.param_count("3d", (16, 3, 3), gain=True) == 8
    assert fgfp.param_count("ca", (16, 3, 3)) == 21
    assert fgfp.param_count("orig", (16, 3, 3)) == 80


def test_zero_order_3d_is_separable_gaussian():
    params = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0])
    k = fgfp.synthesize("3d", (3, 3, 3), params)
    g = np.exp(-((np.arange(3) - 1.0) ** 2))
    assert np.allclose(k, np.einsum("c,x,y->cxy", g, g, g), atol=1e-12)


def test_fit_recovers_planted_kernel():
    planted = np.array([0.6, 1.1, 0.3, 1.2, 0.8, 1.5, 1.1])
    target = fgfp.synthesize("3d", (4, 3, 3), planted)
    r = fgfp.fit(target, kind="3d", restarts=8, iters=500, seed=3)
    assert r["loss"] <= 1e-6 * float(np.sum(target**2))
    assert np.allclose(fgfp.synthesize("3d", (4, 3, 3), np.array(r["params"])), target, atol=1e-3)


def test_fit_rejects_bad_shape():
    with pytest.raises(fgfp.DimensionError):
        fgfp.fit(np.zeros((3, 3)), kind="3d")


def test_layer_threshold():
    cut = fgfp.layer_threshold(np.array([0.5, -0.1, 0.3, 0.0, -0.7], dtype=np.float32), 0.5)
    assert cut == (pytest.approx(0.3), 2)
    assert fgfp.layer_threshold(np.zeros(4, dtype=np.float32), 0.5) is None


def test_compression_ratio():
    assert fgfp.compression_ratio(100, 25) == pytest.approx(75.0)


def test_missing_checkpoint():
    with pytest.raises(fgfp.IoError):
        fgfp.read_summary("/nonexistent/model.fgfp")


def _cli():
    for p in (Path("build/fgfp"), Path(__file__).resolve().parents[2] / "build" / "fgfp"):
        if p.exists():
            return p
    return None


def test_checkpoint_summary_from_cli(tmp_path):
    cli = _cli()
    if cli is None:
        pytest.skip("fgfp CLI not built")
    model = tmp_path / "m"
    data = Path(__file__).resolve().parents[2] / "data" / "mnist"
    if not data.exists():
        pytest.skip("MNIST not available")
    subprocess.run(
        [str(cli), "train", "--data", str(data), "--epochs", "0.01", "--seed", "1",
         "--widths", "4,8,8", "--out", str(model)],
        check=True, capture_output=True,
    )
    ckpt = model / "model.fgfp"
    s = fgfp.read_summary(str(ckpt))
    assert [l["id"] for l in s["layers"]][:1] == ["conv1"]
    assert s["logical"] == sum(l["logical"] for l in s["layers"])
    assert isinstance(fgfp.model_digest(str(ckpt)), int)
    with pytest.raises(ValueError):
        fgfp.export_kernel(str(ckpt), "conv1", 0)
