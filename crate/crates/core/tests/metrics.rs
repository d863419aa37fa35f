mod common;

use std::path::PathBuf;

use common::{noisy_copy, random_frame, rng, ssim_oracle};
use rand::Rng;
use tdvc::frame::Frame;
use tdvc::metrics::{bd_rate, curves_by_key, psnr, read_rows, ssim, write_rows, RdCurve};
use tdvc::Error;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// Least-squares cubic `log10(rate) ≈ p(psnr)` by Gaussian elimination on
/// the normal equations, integrated with composite Simpson over the PSNR
/// overlap. Independent of the library's centred/scaled formulation.
fn bd_rate_quadrature(anchor: &[(f64, f64)], test: &[(f64, f64)]) -> f64 {
    fn fit(points: &[(f64, f64)], centre: f64) -> [f64; 4] {
        let mut a = [[0.0f64; 5]; 4];
        for &(rate, d) in points {
            let x = d - centre;
            let basis = [1.0, x, x * x, x * x * x];
            for i in 0..4 {
                for j in 0..4 {
                    a[i][j] += basis[i] * basis[j];
                }
                a[i][4] += basis[i] * rate.log10();
            }
        }
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            for row in 0..4 {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..5 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        [0, 1, 2, 3].map(|i| a[i][4] / a[i][i])
    }
    let range = |p: &[(f64, f64)]| {
        p.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, d)| {
                (lo.min(d), hi.max(d))
            })
    };
    let (alo, ahi) = range(anchor);
    let (tlo, thi) = range(test);
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    let centre = 0.5 * (lo + hi);
    let (pa, pt) = (fit(anchor, centre), fit(test, centre));
    let eval = |p: &[f64; 4], d: f64| {
        let x = d - centre;
        p[0] + x * (p[1] + x * (p[2] + x * p[3]))
    };
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let integral: f64 = (0..=n)
        .map(|i| {
            let d = lo + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * (eval(&pt, d) - eval(&pa, d))
        })
        .sum::<f64>()
        * h
        / 3.0;
    (10f64.powf(integral / (hi - lo)) - 1.0) * 100.0
}

#[test]
fn psnr_closed_form_for_unit_mse() {
    let a = Frame::new(4, 1, 8, vec![10, 20, 30, 40]).unwrap();
    let b = Frame::new(4, 1, 8, vec![11, 19, 31, 39]).unwrap();
    assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-4);
    let a16 = Frame::new(2, 1, 16, vec![100, 200]).unwrap();
    let b16 = Frame::new(2, 1, 16, vec![101, 199]).unwrap();
    let expect = 10.0 * (65535.0f64 * 65535.0).log10();
    assert!((psnr(&a16, &b16).unwrap() - expect).abs() < 1e-9);
}

#[test]
fn ssim_matches_the_window_by_window_oracle() {
    let mut g = rng(51);
    for i in 0..20 {
        let (w, h) = (g.random_range(11..40), g.random_range(11..40));
        let depth = if i % 2 == 0 { 8 } else { 16 };
        let a = random_frame(&mut g, w, h, depth);
        let b = if i % 3 == 0 {
            random_frame(&mut g, w, h, depth)
        } else {
            let amp = if depth == 8 { 20 } else { 5000 };
            noisy_copy(&mut g, &a, amp)
        };
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_oracle(&a, &b);
        assert!((fast - slow).abs() < 1e-9, "pair {i}: {fast} vs {slow}");
    }
}

#[test]
fn ssim_identity_and_symmetry() {
    let mut g = rng(52);
    let a = random_frame(&mut g, 30, 20, 16);
    let b = noisy_copy(&mut g, &a, 3000);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
}

#[test]
fn bd_rate_matches_quadrature_on_random_curves() {
    let mut g = rng(53);
    let mut compared = 0;
    for _ in 0..30 {
        let make = |g: &mut rand_chacha::ChaCha8Rng, rate_scale: f64| {
            let mut d = 30.0;
            let mut r = g.random_range(50.0..200.0) * rate_scale;
            (0..g.random_range(4..8))
                .map(|_| {
                    d += g.random_range(1.0..3.0);
                    r *= g.random_range(1.3..2.2);
                    (r, d)
                })
                .collect::<Vec<_>>()
        };
        let a = make(&mut g, 1.0);
        let shift = g.random_range(0.3..1.5);
        let t = make(&mut g, shift);
        let expected = bd_rate_quadrature(&a, &t);
        let got = bd_rate(&RdCurve::new(a).unwrap(), &RdCurve::new(t).unwrap());
        match got {
            Ok(v) => {
                assert!(
                    (v - expected).abs() < 1e-6 * (1.0 + expected.abs()),
                    "{v} vs {expected}"
                );
                compared += 1;
            }
            Err(Error::Domain(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
    assert!(compared >= 20, "only {compared} curve pairs overlapped");
}

#[test]
fn bd_rate_identity_half_rate_and_overlap() {
    let pts = vec![(100.0, 30.0), (180.0, 33.0), (350.0, 36.0), (700.0, 39.0)];
    let a = RdCurve::new(pts.clone()).unwrap();
    assert!(bd_rate(&a, &a).unwrap().abs() < 1e-9);
    let half = RdCurve::new(pts.iter().map(|&(r, d)| (r / 2.0, d)).collect()).unwrap();
    assert!((bd_rate(&a, &half).unwrap() + 50.0).abs() < 1e-6);
    let far = RdCurve::new(pts.iter().map(|&(r, d)| (r, d + 20.0)).collect()).unwrap();
    assert!(matches!(bd_rate(&a, &far), Err(Error::Domain(_))));
    assert!(RdCurve::new(pts[..3].to_vec()).is_err());
}

#[test]
fn reference_ballet_curves_parse_and_compare() {
    let anchor = read_rows(std::fs::File::open(data("table1_ballet_hevc.csv")).unwrap()).unwrap();
    let test = read_rows(std::fs::File::open(data("table2_ballet_proposed.csv")).unwrap()).unwrap();
    assert_eq!(anchor.len(), 14);
    assert_eq!(test.len(), 70);
    let anchors = curves_by_key(&anchor);
    let tests = curves_by_key(&test);
    assert_eq!(anchors.len(), 2);
    assert_eq!(tests.len(), 10);
    for (key, curve) in &tests {
        let a = anchors
            .iter()
            .find(|(k, _)| k.camera == key.camera)
            .unwrap()
            .1
            .as_ref()
            .unwrap();
        let t = curve.as_ref().unwrap();
        let v = bd_rate(a, t).unwrap();
        assert!(v < 0.0, "{key}: {v}");
        let q = bd_rate_quadrature(a.points(), t.points());
        assert!((v - q).abs() < 1e-6 * (1.0 + q.abs()));
    }
    let mut buf = Vec::new();
    write_rows(&test, &mut buf).unwrap();
    assert_eq!(read_rows(buf.as_slice()).unwrap(), test);
}
