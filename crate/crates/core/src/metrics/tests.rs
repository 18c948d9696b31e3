use super::*;
use crate::imaging::{interp23, reflect};
use crate::rng::{seeded, RngExt};
use proptest::prelude::*;

fn random(h: usize, w: usize, c: usize, seed: u64) -> Raster {
    let mut rng = seeded(seed);
    Raster::from_fn(h, w, c, |_, _, _| rng.random_range(0.05..0.95))
}

/// `a` plus a noisy copy, so the pair is positively correlated.
fn related(a: &Raster, seed: u64) -> Raster {
    let mut rng = seeded(seed);
    let (h, w, c) = a.dims();
    Raster::from_fn(h, w, c, |y, x, b| {
        0.8 * a.get(y, x, b) + 0.1 + rng.random_range(-0.05..0.05)
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---- oracles -------------------------------------------------------------

fn sam_oracle(f: &Raster, r: &Raster) -> f64 {
    let (h, w, c) = f.dims();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (mut d, mut a, mut b) = (0.0, 0.0, 0.0);
            for k in 0..c {
                d += f.get(y, x, k) * r.get(y, x, k);
                a += f.get(y, x, k).powi(2);
                b += r.get(y, x, k).powi(2);
            }
            if a > 0.0 && b > 0.0 {
                sum += (d / (a.sqrt() * b.sqrt())).min(1.0).acos();
            }
        }
    }
    sum / (h * w) as f64 * 180.0 / std::f64::consts::PI
}

fn ergas_oracle(f: &Raster, r: &Raster, ratio: f64) -> f64 {
    let (h, w, c) = f.dims();
    let mut acc = 0.0;
    for k in 0..c {
        let mut mse = 0.0;
        let mut mean = 0.0;
        for y in 0..h {
            for x in 0..w {
                mse += (f.get(y, x, k) - r.get(y, x, k)).powi(2);
                mean += r.get(y, x, k);
            }
        }
        let n = (h * w) as f64;
        acc += (mse / n).sqrt().powi(2) / (mean / n).powi(2);
    }
    100.0 / ratio * (acc / c as f64).sqrt()
}

fn highpass_oracle(img: &Raster, k: usize) -> Vec<f64> {
    let (h, w, _) = img.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let s = img.get(reflect(y as isize + dy, h), reflect(x as isize + dx, w), k);
                    v += if dy == 0 && dx == 0 { 8.0 * s } else { -s };
                }
            }
            out.push(v);
        }
    }
    out
}

fn corr_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n - ma * mb;
    let va = a.iter().map(|x| x * x).sum::<f64>() / n - ma * ma;
    let vb = b.iter().map(|x| x * x).sum::<f64>() / n - mb * mb;
    cov / (va * vb).sqrt()
}

fn scc_oracle(f: &Raster, r: &Raster) -> f64 {
    let c = f.bands();
    (0..c)
        .map(|k| corr_oracle(&highpass_oracle(f, k), &highpass_oracle(r, k)))
        .sum::<f64>()
        / c as f64
}

fn uiqi_oracle(a: &[f64], b: &[f64], h: usize, w: usize, win: usize) -> f64 {
    let mut qs = Vec::new();
    let mut y0 = 0;
    while y0 + win <= h {
        let mut x0 = 0;
        while x0 + win <= w {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let (p, q) = (a[y * w + x], b[y * w + x]);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let n = (win * win) as f64;
            let (ma, mb) = (sa / n, sb / n);
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cab = sab / n - ma * mb;
            qs.push(4.0 * cab * ma * mb / ((va + vb) * (ma * ma + mb * mb)));
            x0 += win;
        }
        y0 += win;
    }
    qs.iter().sum::<f64>() / qs.len() as f64
}

#[derive(Clone, Copy)]
struct Cx(f64, f64);

impl Cx {
    fn mul(self, o: Cx) -> Cx {
        Cx(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn conj(self) -> Cx {
        Cx(self.0, -self.1)
    }
    fn abs(self) -> f64 {
        self.0.hypot(self.1)
    }
}

/// Two-band Q2ⁿ via complex arithmetic on one window covering `win × win`.
fn q_complex_oracle(f: &Raster, r: &Raster, win: usize) -> f64 {
    let n = (win * win) as f64;
    let (mut mx, mut my, mut cross) = (Cx(0.0, 0.0), Cx(0.0, 0.0), Cx(0.0, 0.0));
    let (mut ex, mut ey) = (0.0, 0.0);
    for y in 0..win {
        for x in 0..win {
            let a = Cx(f.get(y, x, 0), f.get(y, x, 1));
            let b = Cx(r.get(y, x, 0), r.get(y, x, 1));
            mx = Cx(mx.0 + a.0 / n, mx.1 + a.1 / n);
            my = Cx(my.0 + b.0 / n, my.1 + b.1 / n);
            let p = a.mul(b.conj());
            cross = Cx(cross.0 + p.0 / n, cross.1 + p.1 / n);
            ex += a.abs().powi(2) / n;
            ey += b.abs().powi(2) / n;
        }
    }
    let m = mx.mul(my.conj());
    let cov = Cx(cross.0 - m.0, cross.1 - m.1);
    let vx = ex - mx.abs().powi(2);
    let vy = ey - my.abs().powi(2);
    4.0 * cov.abs() * mx.abs() * my.abs() / ((vx + vy) * (mx.abs().powi(2) + my.abs().powi(2)))
}

// ---- SAM / ERGAS / SCC ---------------------------------------------------

#[test]
fn sam_examples() {
    let x = Raster::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
    let y = Raster::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
    assert!(close(sam(&x, &y).unwrap(), 45.0, 1e-12));
    let r = random(33, 33, 8, 1);
    assert_eq!(sam(&r, &r).unwrap(), 0.0);
    assert!(sam(&r.map(|v| 2.0 * v), &r).unwrap() < 1e-6);
    let zero = Raster::filled(2, 2, 3, 0.0);
    assert_eq!(sam(&zero, &random(2, 2, 3, 2)).unwrap(), 0.0);
}

#[test]
fn sam_matches_oracle() {
    let (f, r) = (random(33, 33, 8, 3), random(33, 33, 8, 4));
    assert!(close(sam(&f, &r).unwrap(), sam_oracle(&f, &r), 1e-9));
}

#[test]
fn ergas_examples_and_oracle() {
    let f = Raster::filled(4, 4, 1, 0.6);
    let r = Raster::filled(4, 4, 1, 0.5);
    assert!(close(ergas(&f, &r, 4).unwrap(), 5.0, 1e-12));
    let x = random(33, 33, 8, 5);
    assert_eq!(ergas(&x, &x, 4).unwrap(), 0.0);
    let y = random(33, 33, 8, 6);
    assert!(close(ergas(&x, &y, 4).unwrap(), ergas_oracle(&x, &y, 4.0), 1e-12));
    let err = ergas(&x, &Raster::filled(33, 33, 8, 0.0), 4).unwrap_err();
    assert!(err.to_string().contains("band 0"));
}

#[test]
fn ergas_is_invariant_under_joint_scaling() {
    let (x, y) = (random(16, 16, 4, 7), random(16, 16, 4, 8));
    let a = ergas(&x, &y, 4).unwrap();
    let b = ergas(&x.map(|v| 3.0 * v), &y.map(|v| 3.0 * v), 4).unwrap();
    assert!(close(a, b, 1e-12));
}

#[test]
fn scc_examples_and_oracle() {
    let x = random(33, 33, 4, 9);
    assert!(close(scc(&x, &x).unwrap(), 1.0, 1e-15));
    assert!(close(scc(&x.map(|v| 1.0 - v), &x).unwrap(), -1.0, 1e-12));
    let y = random(33, 33, 4, 10);
    assert!(close(scc(&x, &y).unwrap(), scc_oracle(&x, &y), 1e-12));
}

#[test]
fn scc_skips_flat_bands() {
    let x = random(8, 8, 2, 11);
    let mut flat = x.clone();
    for y in 0..8 {
        for xx in 0..8 {
            flat.set(y, xx, 1, 0.5);
        }
    }
    assert!(close(scc(&flat, &x).unwrap(), 1.0, 1e-12));
    assert!(scc(&Raster::filled(8, 8, 1, 0.3), &Raster::filled(8, 8, 1, 0.3)).is_err());
}

// ---- UIQI / Q2ⁿ ----------------------------------------------------------

#[test]
fn uiqi_examples_and_oracle() {
    let a = random(33, 33, 1, 12).into_data();
    assert!(close(uiqi(&a, &a, 33, 33, 32).unwrap(), 1.0, 1e-12));
    let shifted: Vec<f64> = a.iter().map(|v| v + 0.3).collect();
    assert!(uiqi(&a, &shifted, 33, 33, 32).unwrap() < 1.0);
    let b = related(&random(33, 33, 1, 12), 13).into_data();
    assert!(close(
        uiqi(&a, &b, 33, 33, 32).unwrap(),
        uiqi_oracle(&a, &b, 33, 33, 32),
        1e-12
    ));
    let (c, d) = (random(64, 48, 1, 14).into_data(), random(64, 48, 1, 15).into_data());
    assert!(close(
        uiqi(&c, &d, 64, 48, 16).unwrap(),
        uiqi_oracle(&c, &d, 64, 48, 16),
        1e-12
    ));
    assert!(uiqi(&c, &d, 64, 48, 65).is_err());
}

#[test]
fn uiqi_degenerate_windows() {
    let flat = vec![0.4; 64];
    assert_eq!(uiqi(&flat, &flat, 8, 8, 8).unwrap(), 1.0);
    assert_eq!(uiqi(&flat, &vec![0.0; 64], 8, 8, 8).unwrap(), 0.0);
}

#[test]
fn q2n_ideal_value() {
    for c in [1, 2, 3, 4, 8] {
        let x = random(33, 33, c, 16 + c as u64);
        assert!(close(q2n(&x, &x, 32).unwrap(), 1.0, 1e-12), "c = {c}");
    }
    assert!(q2n(&random(32, 32, 9, 1), &random(32, 32, 9, 2), 32).is_err());
}

#[test]
fn q2n_one_band_is_uiqi() {
    let a = random(33, 33, 1, 20);
    let b = related(&a, 21);
    let q = q2n(&a, &b, 32).unwrap();
    assert!(close(q, uiqi(a.data(), b.data(), 33, 33, 32).unwrap(), 1e-12));
}

#[test]
fn q2n_two_bands_matches_complex_oracle() {
    let a = random(33, 33, 2, 22);
    let b = related(&a, 23);
    assert!(close(q2n(&a, &b, 32).unwrap(), q_complex_oracle(&a, &b, 32), 1e-9));
    let c = random(33, 33, 2, 24);
    assert!(close(q2n(&a, &c, 32).unwrap(), q_complex_oracle(&a, &c, 32), 1e-9));
}

#[test]
fn cayley_dickson_level_one_is_complex() {
    let p = cd_mul(&[1.0, 2.0], &[3.0, -1.0]);
    let q = Cx(1.0, 2.0).mul(Cx(3.0, -1.0));
    assert_eq!(p, vec![q.0, q.1]);
}

proptest! {
    #[test]
    fn cayley_dickson_norm_is_multiplicative(v in prop::collection::vec(-2.0f64..2.0, 16), level in 0usize..4) {
        let n = 1 << level;
        let (x, y) = (&v[..n], &v[8..8 + n]);
        let nx: f64 = x.iter().map(|a| a * a).sum();
        let ny: f64 = y.iter().map(|a| a * a).sum();
        let nxy: f64 = cd_mul(x, y).iter().map(|a| a * a).sum();
        prop_assert!((nxy - nx * ny).abs() < 1e-9 * (1.0 + nx * ny));
        let lhs = cd_conj(&cd_mul(x, y));
        let rhs = cd_mul(&cd_conj(y), &cd_conj(x));
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn windowed_indices_are_symmetric(seed in 0u64..1000) {
        let a = random(33, 33, 4, seed);
        let b = related(&a, seed + 1);
        let q1 = q2n(&a, &b, 32).unwrap();
        let q2 = q2n(&b, &a, 32).unwrap();
        prop_assert!((q1 - q2).abs() < 1e-12);
        let u1 = uiqi(&a.band(0), &b.band(0), 33, 33, 32).unwrap();
        let u2 = uiqi(&b.band(0), &a.band(0), 33, 33, 32).unwrap();
        prop_assert!((u1 - u2).abs() < 1e-12);
        prop_assert!((scc(&a, &b).unwrap() - scc(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sam_ignores_per_pixel_scaling(seed in 0u64..1000) {
        let a = random(6, 6, 4, seed);
        let b = random(6, 6, 4, seed + 7);
        let mut rng = seeded(seed);
        let scales: Vec<f64> = (0..36).map(|_| rng.random_range(0.1..5.0)).collect();
        let scaled = Raster::from_fn(6, 6, 4, |y, x, k| a.get(y, x, k) * scales[y * 6 + x]);
        prop_assert!((sam(&scaled, &b).unwrap() - sam(&a, &b).unwrap()).abs() < 1e-9);
    }
}

// ---- no-reference indices ------------------------------------------------

fn d_lambda_oracle(f: &Raster, m: &Raster, ratio: usize, win: usize) -> f64 {
    let c = f.bands();
    let mut acc = 0.0;
    for k in 0..c {
        for l in 0..c {
            if k == l {
                continue;
            }
            let qf = uiqi_oracle(&f.band(k), &f.band(l), f.height(), f.width(), win);
            let qm = uiqi_oracle(&m.band(k), &m.band(l), m.height(), m.width(), win / ratio);
            acc += (qf - qm).abs();
        }
    }
    acc / (c * (c - 1)) as f64
}

fn d_s_oracle(f: &Raster, m: &Raster, p: &Raster, pd: &Raster, ratio: usize, win: usize) -> f64 {
    let c = f.bands();
    let mut acc = 0.0;
    for k in 0..c {
        let hi = uiqi_oracle(&f.band(k), p.data(), f.height(), f.width(), win);
        let lo = uiqi_oracle(&m.band(k), pd.data(), m.height(), m.width(), win / ratio);
        acc += (hi - lo).abs();
    }
    acc / c as f64
}

#[test]
fn d_lambda_matches_oracle() {
    let opts = MetricOptions::default();
    let m = random(16, 16, 4, 30);
    let f = related(&interp23(&m, 4).unwrap(), 31);
    let got = d_lambda(&f, &m, 4, &opts).unwrap();
    assert!(close(got, d_lambda_oracle(&f, &m, 4, 32), 1e-12));
    assert!((0.0..=1.0).contains(&got));
    assert!(d_lambda(&random(32, 32, 1, 1), &random(8, 8, 1, 1), 4, &opts).is_err());
}

#[test]
fn d_lambda_two_band_closed_form() {
    // the difference of inter-band indices at the two scales is the whole sum
    let opts = MetricOptions {
        window: 8,
        ..Default::default()
    };
    let m = random(8, 8, 2, 32);
    let f = random(16, 16, 2, 33);
    let qf = uiqi(&f.band(0), &f.band(1), 16, 16, 8).unwrap();
    let qm = uiqi(&m.band(0), &m.band(1), 8, 8, 4).unwrap();
    assert!(close(d_lambda(&f, &m, 2, &opts).unwrap(), (qf - qm).abs(), 1e-15));
}

#[test]
fn d_lambda_of_constant_interpolation_is_zero() {
    let m = Raster::from_fn(16, 16, 4, |_, _, k| 0.2 + 0.1 * k as f64);
    let f = interp23(&m, 4).unwrap();
    assert_eq!(d_lambda(&f, &m, 4, &MetricOptions::default()).unwrap(), 0.0);
}

#[test]
fn d_s_matches_oracle_and_ideal_case() {
    let opts = MetricOptions::default();
    let sensor = SensorSpec::worldview3();
    let pan = random(64, 64, 1, 40);
    let pd = degrade_pan(&pan, &sensor).unwrap();
    let m = related(&random(16, 16, 8, 41), 42);
    let f = related(&random(64, 64, 8, 43), 44);
    let got = d_s(&f, &m, &pan, &pd, 4, &opts).unwrap();
    assert!(close(got, d_s_oracle(&f, &m, &pan, &pd, 4, 32), 1e-12));

    let f_ideal = pan.broadcast_bands(8);
    let m_ideal = pd.broadcast_bands(8);
    assert_eq!(d_s(&f_ideal, &m_ideal, &pan, &pd, 4, &opts).unwrap(), 0.0);
}

#[test]
fn qnr_values() {
    let o = MetricOptions::default();
    assert_eq!(qnr(0.0, 0.0, &o).unwrap(), 1.0);
    assert_eq!(qnr(1.0, 0.3, &o).unwrap(), 0.0);
    assert!(close(qnr(0.0209, 0.0219, &o).unwrap(), 0.9576, 5e-4));
    assert!(qnr(-0.1, 0.0, &o).is_err());
    assert!(qnr(0.0, 1.5, &o).is_err());
}

#[test]
fn full_scores_are_in_range() {
    let sensor = SensorSpec::worldview3();
    let m = random(16, 16, 8, 50);
    let pan = random(64, 64, 1, 51);
    let f = interp23(&m, 4).unwrap();
    let s = full_scores(&f, &m, &pan, &sensor, &MetricOptions::default()).unwrap();
    assert!((0.0..=1.0).contains(&s.d_lambda) && (0.0..=1.0).contains(&s.d_s));
    assert!(close(s.qnr, (1.0 - s.d_lambda) * (1.0 - s.d_s), 1e-15));
}

// ---- report --------------------------------------------------------------

#[test]
fn report_csv_layout_and_round_trip() {
    let mut rep = EvalReport::default();
    rep.push(
        EvalRecord::new("exp", "0")
            .with(Metric::Sam, 4.123456789)
            .with(Metric::Ergas, 3.0),
    );
    rep.push(
        EvalRecord::new("exp", "1")
            .with(Metric::Sam, 5.0)
            .with(Metric::Ergas, 1.0),
    );
    rep.push(EvalRecord::new("glp-hpm", "0").with(Metric::Qnr, 0.9575));
    let csv = rep.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,image,sam,ergas,scc,q2n,d_lambda,d_s,qnr");
    assert_eq!(lines[1], "exp,0,4.12346,3,,,,,");
    assert_eq!(lines[4], "exp,__mean,4.56173,2,,,,,");
    assert!(lines[5].starts_with("exp,__std,0.61981,1.41421,"));
    assert_eq!(lines.len(), 8);
    let back = EvalReport::from_csv(&csv).unwrap();
    assert_eq!(back.records.len(), 3);
    assert_eq!(back.records[0].get(Metric::Sam), Some(4.12346));
    assert!(EvalReport::from_csv("a,b\n").is_err());
}

#[test]
fn value_formatting() {
    assert_eq!(report::format_value(0.957571234), "0.957571");
    assert_eq!(report::format_value(1234567.0), "1234570");
    assert_eq!(report::format_value(0.0), "0");
}

#[test]
fn ranking_flags_match_direct_extrema() {
    use report::{EvalRecord, EvalReport, Metric};
    let mut rng = seeded(77);
    let mut rep = EvalReport::default();
    let methods = ["a", "b", "c", "d"];
    for m in methods {
        for img in 0..3 {
            let mut rec = EvalRecord::new(m, img.to_string());
            for metric in [Metric::Sam, Metric::Ergas, Metric::Scc, Metric::Q2n] {
                rec = rec.with(metric, rng.random_range(0.0..1.0));
            }
            rep.push(rec);
        }
    }
    let table = rep.rank().unwrap();
    assert_eq!(
        table.columns,
        vec![Metric::Sam, Metric::Ergas, Metric::Scc, Metric::Q2n]
    );
    assert_eq!(table.rows.len(), 4);
    for (j, &metric) in table.columns.iter().enumerate() {
        let means: Vec<(String, f64)> = methods
            .iter()
            .map(|m| {
                let v: Vec<f64> = rep
                    .records
                    .iter()
                    .filter(|r| r.method == *m)
                    .map(|r| r.get(metric).unwrap())
                    .collect();
                (m.to_string(), v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        let pick = if metric.lower_is_better() {
            means.iter().min_by(|a, b| a.1.total_cmp(&b.1))
        } else {
            means.iter().max_by(|a, b| a.1.total_cmp(&b.1))
        };
        let flagged: Vec<&str> = table
            .rows
            .iter()
            .filter(|r| r.best[j])
            .map(|r| r.method.as_str())
            .collect();
        assert_eq!(flagged, vec![pick.unwrap().0.as_str()], "{metric:?}");
    }
    let ranks: Vec<f64> = table.rows.iter().map(|r| r.mean_rank).collect();
    assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn ideal_method_ranks_first_and_single_method_has_one_row() {
    use report::{EvalRecord, EvalReport, Metric};
    let reference = random(16, 16, 4, 5);
    let other = related(&reference, 6);
    let opts = MetricOptions {
        window: 8,
        ..MetricOptions::default()
    };
    let mut rep = EvalReport::default();
    for (name, fused) in [("noisy", &other), ("ideal", &reference)] {
        let s = reduced_scores(fused, &reference, 4, &opts).unwrap();
        rep.push(
            EvalRecord::new(name, "0")
                .with(Metric::Sam, s.sam)
                .with(Metric::Ergas, s.ergas)
                .with(Metric::Scc, s.scc)
                .with(Metric::Q2n, s.q2n),
        );
    }
    let table = rep.rank().unwrap();
    assert_eq!(table.rows[0].method, "ideal");
    assert!(table.rows[0].best.iter().all(|&b| b));
    assert!(table.to_text().lines().nth(1).unwrap().starts_with("ideal"));

    let mut single = EvalReport::default();
    single.push(EvalRecord::new("exp", "0").with(Metric::Sam, 1.0));
    let t = single.rank().unwrap();
    assert_eq!(t.rows.len(), 1);
    assert!(t.rows[0].best[0]);
    assert!(EvalReport::default().rank().is_err());
}
