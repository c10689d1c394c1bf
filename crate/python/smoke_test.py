"""Smoke test for the toposeg_py extension module.

Build the extension first:

    cargo build -p toposeg-python --features extension-module --release

then run `python python/smoke_test.py`. If `toposeg_py` is not installed, the
script loads the freshly built library from target/.
"""

import importlib.util
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    try:
        import toposeg_py

        return toposeg_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = os.path.join(ROOT, "target", profile, "libtoposeg_py.so")
        if os.path.exists(lib):
            dest = os.path.join(tempfile.mkdtemp(), "toposeg_py.so")
            shutil.copy(lib, dest)
            spec = importlib.util.spec_from_file_location("toposeg_py", dest)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("toposeg_py not found; build it with cargo first")


def disk(n, cx, cy, r):
    h = 1.0 / n
    out = []
    for j in range(n):
        for i in range(n):
            x, y = (i + 0.5) * h, (j + 0.5) * h
            out.append(2 if (x - cx) ** 2 + (y - cy) ** 2 < r * r else 1)
    return out


def main():
    tp = load_module()

    grid = tp.Grid(2, 32)
    assert (grid.dim, grid.n, grid.node_count, grid.cell_count) == (2, 32, 33 * 33, 32 * 32)
    ident = grid.identity()
    assert len(ident) == 2 * grid.node_count
    assert tp.determinant_range(grid, ident) == (1.0, 1.0)

    params = tp.RegularizerParams.defaults(2)
    assert (params.alpha_l, params.alpha_s, params.alpha_v) == (100.0, 0.0, 100.0)

    for dim, n in ((2, 4), (3, 2)):
        errors = tp.check_gradient(dim, n)
        assert max(errors.values()) <= 1e-6, errors

    truth = disk(32, 0.58, 0.5, 0.22)
    prior = disk(32, 0.5, 0.5, 0.22)
    samples = [200.0 if t == 2 else 30.0 for t in truth]
    res = tp.segment(grid, samples, prior, params=params, ground_truth=truth)
    assert res.topology_preserved
    assert res.det_range[0] > 0.0
    assert res.components[2] == (1, 1)
    assert res.dice[2] > 0.9, res.dice
    energies = [r.energy for r in res.records]
    for rec, nxt in zip(res.records, res.records[1:]):
        if rec.level == nxt.level:
            assert nxt.energy < rec.energy
    print(
        f"segment: F {energies[0]:.4e} -> {res.energy:.4e}, dice {res.dice[2]:.4f}, "
        f"det range [{res.det_range[0]:.3f}, {res.det_range[1]:.3f}], stop {res.stop}"
    )

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "mask.pgm")
        tp.write_labels(path, grid, res.mask)
        assert tp.load_labels(path) == (2, 32, res.mask)
        try:
            tp.load_labels(os.path.join(tmp, "missing.pgm"))
        except OSError:
            pass
        else:
            raise AssertionError("missing file accepted")

    try:
        tp.RegularizerParams(1.0, 0.0, 0.0)
        tp.segment(grid, samples, prior, params=tp.RegularizerParams(1.0, 0.0, 0.0))
    except ValueError:
        pass
    else:
        raise AssertionError("alpha_v = 0 accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
