//! Independent reimplementations checked against the library.

use approx::assert_abs_diff_eq;
use measground_core::capture::{synth_capture, CfaPattern, SyntheticSceneSpec};
use measground_core::image::{Image3, Plane};
use measground_core::isp::{render_proxy, srgb_eotf, srgb_oetf, RenderParams, Transfer};
use measground_core::lost_signal::{analyze, invert_render};
use measground_core::meas_xyz::{demosaic_bilinear, meas_xyz_transform, normalize_mosaic, MeasXyzImage};
use measground_core::text_metrics::{bleu, rouge_l, tokenize};
use measground_core::Mat3;
use proptest::prelude::*;

/// Reflect-101 padding by one pixel, built explicitly.
fn pad(values: &[f64], w: usize, h: usize) -> Vec<Vec<f64>> {
    let idx = |i: isize, n: usize| -> usize {
        if i < 0 {
            1
        } else if i as usize >= n {
            n - 2
        } else {
            i as usize
        }
    };
    (-1..=h as isize)
        .map(|y| (-1..=w as isize).map(|x| values[idx(y, h) * w + idx(x, w)]).collect())
        .collect()
}

/// Demosaic as a normalized box convolution over per-channel sparse planes.
fn demosaic_oracle(norm: &[f64], w: usize, h: usize, cfa: CfaPattern) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; w * h];
    for c in 0..3 {
        let sparse: Vec<f64> = (0..w * h).map(|i| if cfa.channel_at(i % w, i / w) == c { norm[i] } else { 0.0 }).collect();
        let mask: Vec<f64> = (0..w * h).map(|i| if cfa.channel_at(i % w, i / w) == c { 1.0 } else { 0.0 }).collect();
        let (ps, pm) = (pad(&sparse, w, h), pad(&mask, w, h));
        for y in 0..h {
            for x in 0..w {
                if mask[y * w + x] == 1.0 {
                    out[y * w + x][c] = norm[y * w + x];
                    continue;
                }
                let (mut s, mut m) = (0.0, 0.0);
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += ps[y + dy][x + dx];
                        m += pm[y + dy][x + dx];
                    }
                }
                out[y * w + x][c] = s / m;
            }
        }
    }
    out
}

fn cfa_strategy() -> impl Strategy<Value = CfaPattern> {
    prop::sample::select(CfaPattern::ALL.to_vec())
}

proptest! {
    #[test]
    fn demosaic_matches_convolution_oracle(
        w2 in 1usize..6, h2 in 1usize..6, cfa in cfa_strategy(),
        seed in any::<u64>(),
    ) {
        let (w, h) = (2 * w2, 2 * h2);
        let mut state = seed | 1;
        let values: Vec<f64> = (0..w * h).map(|_| {
            state ^= state << 13; state ^= state >> 7; state ^= state << 17;
            (state % 10_000) as f64 / 10_000.0
        }).collect();
        let got = demosaic_bilinear(&Plane::from_vec(w, h, values.clone()).unwrap(), cfa).unwrap();
        let want = demosaic_oracle(&values, w, h, cfa);
        for (g, o) in got.data.iter().zip(&want) {
            for c in 0..3 {
                prop_assert!((g[c] - o[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn meas_xyz_is_in_range(seed in any::<u64>(), bg in 0.0f64..2.0, sigma in 0.0f64..0.1, cfa in cfa_strategy(),
                            wb_r in 0.5f64..3.0, wb_b in 0.5f64..3.0, m01 in -0.5f64..0.5, m12 in -0.5f64..0.5) {
        let spec = SyntheticSceneSpec {
            width: 8, height: 6, background: bg, noise_sigma: sigma, cfa_pattern: cfa,
            wb_gains: [wb_r, 1.0, wb_b],
            cam_to_xyz: Mat3([[1.0, m01, 0.0], [0.0, 1.0, m12], [0.1, 0.0, 1.0]]),
            ..Default::default()
        };
        let capture = synth_capture(&spec, seed).unwrap().capture;
        let z = meas_xyz_transform(&capture).unwrap();
        prop_assert!(z.image().data.iter().flatten().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        prop_assert_eq!((z.width(), z.height()), (8, 6));
    }

    #[test]
    fn meas_xyz_is_linear_below_saturation(seed in any::<u64>(), alpha in 0.05f64..1.0) {
        // black level 0 so scaling codes scales the signal exactly
        let spec = SyntheticSceneSpec {
            width: 8, height: 8, background: 0.3, noise_sigma: 0.05, black_level: 0.0, white_level: 60000.0,
            wb_gains: [2.0, 1.0, 1.5],
            cam_to_xyz: Mat3([[0.6, 0.3, 0.1], [0.2, 0.7, 0.1], [0.0, 0.1, 0.9]]),
            ..Default::default()
        };
        let a = synth_capture(&spec, seed).unwrap().capture;
        let mut b = a.clone();
        let scaled: Vec<u16> = a.mosaic.codes().iter().map(|&c| ((c as f64) * alpha).round() as u16).collect();
        b.mosaic = measground_core::capture::Mosaic::new(8, 8, scaled).unwrap();
        let za = meas_xyz_transform(&a).unwrap();
        let zb = meas_xyz_transform(&b).unwrap();
        // rounding the scaled codes perturbs each code by at most 0.5
        let tol = 0.5 / 60000.0 * 4.0 + 1e-12;
        for (pa, pb) in za.image().data.iter().zip(&zb.image().data) {
            for c in 0..3 {
                prop_assert!((pb[c] - alpha * pa[c]).abs() <= tol, "{} vs {}", pb[c], alpha * pa[c]);
            }
        }
    }

    #[test]
    fn oetf_eotf_round_trip(v in 0.0f64..=1.0) {
        let e = srgb_oetf(v).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((srgb_eotf(e).unwrap() - v).abs() < 1e-12);
    }
}

#[test]
fn meas_xyz_pipeline_by_hand() {
    // 4x4 RGGB capture at a constant normalized level of 0.5 with identity
    // matrix and unit gains: every channel equals 0.5 / S with S = 1.
    let spec = SyntheticSceneSpec { width: 4, height: 4, background: 0.5, black_level: 64.0, white_level: 1088.0, ..Default::default() };
    let capture = synth_capture(&spec, 0).unwrap().capture;
    assert!(capture.mosaic.codes().iter().all(|&c| c == 576));
    let z = meas_xyz_transform(&capture).unwrap();
    for p in &z.image().data {
        for v in p {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-12);
        }
    }
    // code 543 with black 64 and white 1023
    let mut c2 = capture.clone();
    c2.white_level = 1023.0;
    c2.mosaic = measground_core::capture::Mosaic::new(4, 4, vec![543; 16]).unwrap();
    let n = normalize_mosaic(&c2).unwrap();
    assert_abs_diff_eq!(n.plane.data[0], 479.0 / 959.0, epsilon = 1e-15);
}

#[test]
fn periodic_red_tile_demosaics_to_pure_red() {
    let (w, h) = (8, 8);
    let values: Vec<f64> = (0..w * h).map(|i| if i % w % 2 == 0 && i / w % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let img = demosaic_bilinear(&Plane::from_vec(w, h, values).unwrap(), CfaPattern::Rggb).unwrap();
    assert!(img.data.iter().all(|p| *p == [1.0, 0.0, 0.0]));
}

/// sRGB decode written from the piecewise definition.
fn decode(e: f64) -> f64 {
    if e <= 0.04045 {
        e / 12.92
    } else {
        ((e + 0.055) / 1.055).powf(2.4)
    }
}

fn inverse(m: &Mat3) -> [[f64; 3]; 3] {
    let a = m.0;
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    let cof = |r: usize, c: usize| {
        let rows: Vec<usize> = (0..3).filter(|&i| i != r).collect();
        let cols: Vec<usize> = (0..3).filter(|&i| i != c).collect();
        let minor = a[rows[0]][cols[0]] * a[rows[1]][cols[1]] - a[rows[0]][cols[1]] * a[rows[1]][cols[0]];
        if (r + c).is_multiple_of(2) {
            minor
        } else {
            -minor
        }
    };
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = cof(c, r) / det;
        }
    }
    inv
}

#[test]
fn inversion_matches_hand_composed_inverse() {
    let params = RenderParams { quantize: false, exposure_gain: 0.7, ..Default::default() };
    let inv = inverse(&params.xyz_to_linear_srgb);
    let data: Vec<[f64; 3]> = (0..64).map(|i| {
        let t = i as f64 / 64.0;
        [0.3 * t + 0.1, 0.35 * t + 0.1, 0.3 * t + 0.12]
    }).collect();
    let z = MeasXyzImage::new("c".into(), SyntheticSceneSpec::default().metadata, Image3::from_vec(8, 8, data).unwrap()).unwrap();
    let r = render_proxy(&z, &params).unwrap();
    let rec = invert_render(&r).unwrap();
    for (enc, got) in r.encoded().iter().zip(&rec.data) {
        let lin = [decode(enc[0]), decode(enc[1]), decode(enc[2])];
        for c in 0..3 {
            let want = (inv[c][0] * lin[0] + inv[c][1] * lin[1] + inv[c][2] * lin[2]) / 0.7;
            assert_abs_diff_eq!(got[c], want, epsilon = 1e-12);
        }
    }
}

#[test]
fn clipped_pixel_recovers_the_ceiling() {
    // Y = 0.96 under gain 5 clips; recovery lands on the white ceiling / 5
    let params = RenderParams { quantize: false, exposure_gain: 5.0, ..Default::default() };
    let white = inverse(&params.xyz_to_linear_srgb);
    let w: Vec<f64> = (0..3).map(|r| white[r].iter().sum()).collect();
    let px = [0.96 * w[0] / w[1] * 0.9, 0.96, 0.96 * w[2] / w[1] * 0.9];
    let z = MeasXyzImage::new("c".into(), SyntheticSceneSpec::default().metadata, Image3::from_vec(2, 1, vec![px, [0.01; 3]]).unwrap()).unwrap();
    let report = analyze(&z, &params, 2.0 / 255.0, 4).unwrap();
    assert_eq!(report.clipped_fraction, 0.5);
    let rec = invert_render(&render_proxy(&z, &params).unwrap()).unwrap();
    assert_abs_diff_eq!(rec.data[0][1], w[1] / 5.0, epsilon = 1e-12);
    assert_abs_diff_eq!(rec.data[0][1], 0.20, epsilon = 1e-8);
}

#[test]
fn identity_pipeline_inverts_to_clip() {
    let params = RenderParams { quantize: false, transfer: Transfer::Identity, xyz_to_linear_srgb: Mat3::IDENTITY, ..Default::default() };
    let data = vec![[0.2, 0.5, 1.0], [0.0, 0.75, 0.3]];
    let z = MeasXyzImage::new("c".into(), SyntheticSceneSpec::default().metadata, Image3::from_vec(2, 1, data.clone()).unwrap()).unwrap();
    let rec = invert_render(&render_proxy(&z, &params).unwrap()).unwrap();
    assert_eq!(rec.data, data);
}

/// LCS by enumerating every subsequence of the shorter list.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let (s, l) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << s.len()) {
        let sub: Vec<u8> = (0..s.len()).filter(|i| mask >> i & 1 == 1).map(|i| s[i]).collect();
        let mut it = l.iter();
        if sub.iter().all(|x| it.any(|y| y == x)) {
            best = best.max(sub.len());
        }
    }
    best
}

proptest! {
    #[test]
    fn rouge_matches_brute_force(a in prop::collection::vec(0u8..4, 0..8), b in prop::collection::vec(0u8..4, 1..8)) {
        let l = brute_lcs(&a, &b) as f64;
        let want = if l == 0.0 { 0.0 } else {
            let (p, r) = (l / a.len() as f64, l / b.len() as f64);
            2.0 * p * r / (p + r)
        };
        prop_assert!((rouge_l(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn bleu_is_bounded_and_reflexive(words in prop::collection::vec("[a-d]{1,2}", 1..10), other in prop::collection::vec("[a-d]{1,2}", 1..10)) {
        let b = bleu(&words, std::slice::from_ref(&other)).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((bleu(&words, std::slice::from_ref(&words)).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((rouge_l(&words, &words).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rouge_hand_example() {
    let f = rouge_l(&tokenize("a b c d"), &tokenize("a c d")).unwrap();
    assert_abs_diff_eq!(f, 6.0 / 7.0, epsilon = 1e-12);
}
