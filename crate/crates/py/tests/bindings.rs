use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn run(script: &str) {
    Python::initialize();
    Python::attach(|py| {
        let m = wrap_pymodule!(pansharp_py::init)(py);
        let globals = PyDict::new(py);
        globals.set_item("ps", m).unwrap();
        let code = std::ffi::CString::new(script).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("script failed");
        }
    });
}

#[test]
fn raster_round_trip_and_shape_errors() {
    run(r#"
r = ps.Raster(2, 3, 2, [i / 12 for i in range(12)])
assert r.shape == (2, 3, 2)
assert r.get(1, 2, 1) == 11 / 12
assert r.band(0) == [i / 12 for i in range(0, 12, 2)]
try:
    ps.Raster(2, 2, 2, [0.0] * 7)
    raise AssertionError("length mismatch accepted")
except ValueError:
    pass
try:
    r.get(2, 0, 0)
    raise AssertionError("out of range accepted")
except ValueError:
    pass
"#);
}

#[test]
fn classic_fusion_and_metrics() {
    run(r#"
ms, pan = ps.synthetic_scene(16, 3)
assert ms.shape == (16, 16, 8) and pan.shape == (64, 64, 1)
for method in ["exp", "sfim", "glp-hpm", "glp-reg", "mra-unit"]:
    out = ps.fuse(method, ms, pan)
    assert out.shape == (64, 64, 8)
assert ps.sam(ms, ms) == 0.0
assert ps.ergas(ms, ms) == 0.0
assert ps.q2n(ms, ms, 8) == 1.0
assert ps.qnr(0.0, 0.0) == 1.0
dl, ds, q = ps.full_scores(ps.fuse("glp-hpm", ms, pan), ms, pan)
assert 0 <= dl <= 1 and 0 <= ds <= 1 and abs(q - (1 - dl) * (1 - ds)) < 1e-12
try:
    ps.fuse("nope", ms, pan)
    raise AssertionError("unknown method accepted")
except ValueError:
    pass
"#);
}

#[test]
fn network_checkpoint_round_trip() {
    run(r#"
assert ps.parameter_count() == 504488
net = ps.Tdnet(8, seed=5, feature_width=16)
blob = net.checkpoint()
back = ps.Tdnet.from_checkpoint(blob)
assert back.parameter_count == net.parameter_count
ms, pan = ps.synthetic_scene(4, 1)
assert net.fuse(ms, pan) == back.fuse(ms, pan)
try:
    ps.Tdnet.from_checkpoint(b"junk")
    raise AssertionError("bad checkpoint accepted")
except ValueError:
    pass
"#);
}

#[test]
fn split_is_deterministic() {
    run(r#"
a = ps.split(50, (0.7, 0.2, 0.1), 9)
assert a == ps.split(50, (0.7, 0.2, 0.1), 9)
assert sorted(a[0] + a[1] + a[2]) == list(range(50))
assert (len(a[1]), len(a[2])) == (10, 5)
"#);
}
