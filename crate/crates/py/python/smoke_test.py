"""Smoke test for the cownter extension module.

Build first:  cargo build --release -p cownter-py
Then run:     python3 crates/py/python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import math
import os
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def load_module():
    for profile in ("release", "debug"):
        path = os.path.join(ROOT, "target", profile, "libcownter.so")
        if os.path.exists(path):
            loader = importlib.machinery.ExtensionFileLoader("cownter", path)
            spec = importlib.util.spec_from_loader("cownter", loader, origin=path)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("libcownter.so not found; run `cargo build --release -p cownter-py`")


def main():
    cw = load_module()

    assert cw.mape([10, 0], [8.0, 3.0]) == (0.2 + 3.0) / 2
    assert cw.gampe([[1.0, 1.0, 1.0, 0.0]], [[2.0, 0.0, 1.0, 0.0]]) == 1.5
    assert cw.presence_fscore([3, 0], [3.0, 0.0])["f_score"] == 1.0

    dmap = cw.render_density([(0.0, 0.0), (31.9, 15.5), (16.0, 8.0)], 32, 16)
    assert len(dmap) == 32 * 16
    assert abs(sum(dmap) - 3.0) < 1e-9
    assert abs(sum(cw.cell_counts(dmap, 32, 16, 2)) - 3.0) < 1e-9

    labels, n = cw.connected_components([True, False, True, True], 2, 2)
    assert (labels, n) == ([1, 0, 1, 1], 1)
    count, centroids = cw.blob_count([0.9, 0.1, 0.1, 0.1], 2, 2)
    assert count == 1 and centroids == [(0.5, 0.5)]

    total, grad = cw.lcfcn_loss([0.2] * 16, 4, 4, [(1.5, 1.5)])
    assert math.isfinite(total) and len(grad) == 16

    tile = cw.generate_tile(7, 3, 64, [0.0, 1.0, 0.0, 0.0])
    assert tile == cw.generate_tile(7, 3, 64, [0.0, 1.0, 0.0, 0.0])
    assert tile["label"] == "cow" and 1 <= len(tile["points"]) <= 10
    assert len(tile["pixels"]) == 64 * 64 * 3

    model = cw.Model("lcfcn", 3, 0)
    assert model.param_count == 23682 and model.kind == "lcfcn"
    count, points, prob = model.predict(tile["pixels"], 64, 64, 3)
    assert len(prob) == 64 * 64 and all(0.0 <= p <= 1.0 for p in prob)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.bin")
        model.save(path)
        again = cw.Model.load(path)
        assert again.predict(tile["pixels"], 64, 64, 3) == (count, points, prob)

    try:
        cw.render_density([(-1.0, 0.0)], 8, 8)
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-bounds point accepted")

    print("cownter python smoke test: ok")


if __name__ == "__main__":
    main()
