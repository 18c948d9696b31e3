"""Smoke test for the compiled extension.

Build and run from the repository root:

    cargo build --release -p pansharp-py --features extension-module
    cp target/release/libpansharp_py.so python/pansharp.so
    python3 python/smoke_test.py
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pansharp as ps


def main():
    ms, pan = ps.synthetic_scene(32, 7)
    print("scene", ms.shape, pan.shape)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "ms.psr")
        ps.write_psr1(path, ms, 11, "wv3")
        back, depth, sensor = ps.read_psr1(path)
        assert (depth, sensor) == (11, "wv3")
        assert back.shape == ms.shape

    gt = ps.fuse("exp", ms, pan)
    lrms = ps.degrade(ms, 4)
    lrpan = ps.degrade(pan, 4, "wv3")
    for method in ["exp", "sfim", "glp-hpm", "glp-reg", "mra-unit"]:
        out = ps.fuse(method, lrms, lrpan)
        print(f"{method:9s} sam {ps.sam(out, ms):7.4f}  ergas {ps.ergas(out, ms):7.4f}  "
              f"q2n {ps.q2n(out, ms, 8):.4f}")
    dl, ds, q = ps.full_scores(gt, ms, pan)
    print(f"exp full-res  d_lambda {dl:.4f}  d_s {ds:.4f}  qnr {q:.4f}")

    net = ps.Tdnet(8, seed=1)
    assert net.parameter_count == ps.parameter_count() == 504488
    fused = net.fuse(lrms, lrpan)
    assert fused.shape == ms.shape
    assert ps.Tdnet.from_checkpoint(net.checkpoint()).fuse(lrms, lrpan) == fused
    print("tdnet", net.parameter_count, "parameters")
    print("ok")


if __name__ == "__main__":
    main()
