//! Loss terms, Adam and densification against hand-written oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgs_core::image::{Image, Mask};
use sgs_core::linalg::{Quat, Vec3};
use sgs_core::loss::{
    loss_depth, loss_locality, loss_perceptual, loss_photometric, loss_tv, GradientPyramid,
    NeighborGraph,
};
use sgs_core::optim::{
    adam_step, densify_and_prune, AdamConfig, AdamState, DensifyConfig, DensifyStats,
};
use sgs_core::surfel::GaussianSurfel;

fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image<f64> {
    Image::from_vec(
        w,
        h,
        3,
        (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

fn random_mask(rng: &mut impl Rng, w: usize, h: usize, p: f64) -> Mask {
    Mask {
        width: w,
        height: h,
        data: (0..w * h).map(|_| rng.random_bool(p)).collect(),
    }
}

/// Direct 11×11 window sums, zero outside the image.
fn oracle_ssim_mean(x: &Image<f64>, y: &Image<f64>, keep: &[bool]) -> f64 {
    let (w, h) = (x.width, x.height);
    let g: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp())
        .collect();
    let gs: f64 = g.iter().sum();
    let val = |img: &Image<f64>, u: isize, v: isize, c: usize| {
        if u < 0
            || v < 0
            || u >= w as isize
            || v >= h as isize
            || !keep[v as usize * w + u as usize]
        {
            0.0
        } else {
            img.get(u as usize, v as usize, c)
        }
    };
    let (mut sum, mut n) = (0.0, 0usize);
    for py in 0..h {
        for px in 0..w {
            if !keep[py * w + px] {
                continue;
            }
            for c in 0..3 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wt = g[i] * g[j] / (gs * gs);
                        let u = px as isize + i as isize - 5;
                        let v = py as isize + j as isize - 5;
                        let (a, b) = (val(x, u, v, c), val(y, u, v, c));
                        mx += wt * a;
                        my += wt * b;
                        xx += wt * a * a;
                        yy += wt * b * b;
                        xy += wt * a * b;
                    }
                }
                let (c1, c2) = (1e-4, 9e-4);
                let (sx, sy, sxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                sum += (2.0 * mx * my + c1) * (2.0 * sxy + c2)
                    / ((mx * mx + my * my + c1) * (sx + sy + c2));
                n += 1;
            }
        }
    }
    sum / n as f64
}

#[test]
fn photometric_matches_per_pixel_ssim_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let (w, h) = (rng.random_range(8..24), rng.random_range(8..24));
        let a = random_image(&mut rng, w, h);
        let b = random_image(&mut rng, w, h);
        let m = random_mask(&mut rng, w, h, 0.2);
        let keep: Vec<bool> = m.data.iter().map(|v| !v).collect();
        let mut l1 = 0.0;
        let mut n = 0;
        for (p, &k) in keep.iter().enumerate() {
            if k {
                for c in 0..3 {
                    l1 += (a.data[3 * p + c] - b.data[3 * p + c]).abs();
                    n += 1;
                }
            }
        }
        let expect = 0.8 * l1 / n as f64 + 0.2 * (1.0 - oracle_ssim_mean(&a, &b, &keep));
        let got = loss_photometric(&a, &b, Some(&m), 0.2).value;
        assert!((got - expect).abs() / expect < 1e-6, "{got} vs {expect}");
    }
}

#[test]
fn photometric_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_image(&mut rng, 9, 7);
    assert_eq!(loss_photometric(&a, &a, None, 0.2).value, 0.0);
    let b = a.map(|v| v + 0.1);
    assert!((loss_photometric(&b, &a, None, 0.0).value - 0.1).abs() < 1e-12);
    let all = Mask::new(9, 7, true);
    assert_eq!(loss_photometric(&b, &a, Some(&all), 0.2).value, 0.0);
}

#[test]
fn tv_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (w, h) = (rng.random_range(2..20), rng.random_range(2..20));
        let img = random_image(&mut rng, w, h);
        let mut raw = 0.0;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    if x > 0 {
                        raw += (img.get(x, y, c) - img.get(x - 1, y, c)).abs();
                    }
                    if y > 0 {
                        raw += (img.get(x, y, c) - img.get(x, y - 1, c)).abs();
                    }
                }
            }
        }
        let got = loss_tv(&img, None).value;
        assert!((got - raw / (w * h) as f64).abs() < 1e-9);
    }
}

#[test]
fn tv_closed_forms() {
    assert_eq!(loss_tv(&Image::filled(6, 5, 3, 0.4), None).value, 0.0);
    let (w, h) = (8, 5);
    let mut step = Image::new(w, h, 3);
    for y in 0..h {
        for x in w / 2..w {
            for c in 0..3 {
                step.set(x, y, c, 1.0);
            }
        }
    }
    assert_eq!(loss_tv(&step, None).value, (h * 3) as f64 / (h * w) as f64);
}

fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vec3<f64>> {
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect()
}

#[test]
fn locality_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 50;
    let pc = random_points(&mut rng, n);
    let pd: Vec<Vec3<f64>> = pc
        .iter()
        .map(|p| {
            *p + Vec3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                0.0,
            )
        })
        .collect();
    let sc: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(0.01..0.1), rng.random_range(0.01..0.1)])
        .collect();
    let sd: Vec<[f64; 2]> = sc
        .iter()
        .map(|s| {
            [
                s[0] * rng.random_range(0.8..1.2),
                s[1] * rng.random_range(0.8..1.2),
            ]
        })
        .collect();
    let g = NeighborGraph::build(&pc, 5);

    // brute kNN: sort every other point by distance, ties by index
    let mut edges = Vec::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((pc[i] - pc[j]).norm(), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mine: Vec<u32> = others[..5].iter().map(|o| o.1 as u32).collect();
        assert_eq!(g.neighbors[i], mine);
        edges.extend(mine.iter().map(|&j| (i, j as usize)));
    }
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let mut lp = 0.0;
    let mut lc = 0.0;
    for &(i, j) in &edges {
        lp += (l1(&pc[i].to_array(), &pc[j].to_array()) - l1(&pd[i].to_array(), &pd[j].to_array()))
            .abs();
        lc += (l1(&sc[i], &sc[j]) - l1(&sd[i], &sd[j])).abs();
    }
    let e = edges.len() as f64;
    let got = loss_locality(&pc, &pd, &sc, &sd, &g);
    assert!((got.l_pos - lp / e).abs() < 1e-9);
    assert!((got.l_cov - lc / e).abs() < 1e-9);
}

#[test]
fn locality_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pc = random_points(&mut rng, 30);
    let sc: Vec<[f64; 2]> = (0..30)
        .map(|_| [rng.random_range(0.01..0.1), 0.05])
        .collect();
    let g = NeighborGraph::build(&pc, 5);
    let same = loss_locality(&pc, &pc, &sc, &sc, &g);
    assert_eq!((same.l_pos, same.l_cov), (0.0, 0.0));
    let shift = Vec3::new(0.3, -1.1, 2.5);
    let moved: Vec<Vec3<f64>> = pc.iter().map(|p| *p + shift).collect();
    let t = loss_locality(&pc, &moved, &sc, &sc, &g);
    assert!(t.l_pos < 1e-12 && t.l_cov == 0.0);
    // translating both sets leaves a nonzero loss unchanged
    let pd: Vec<Vec3<f64>> = pc.iter().map(|p| *p * 1.1).collect();
    let base = loss_locality(&pc, &pd, &sc, &sc, &g).l_pos;
    let pc2: Vec<Vec3<f64>> = pc.iter().map(|p| *p + shift).collect();
    let pd2: Vec<Vec3<f64>> = pd.iter().map(|p| *p + shift).collect();
    assert!((loss_locality(&pc2, &pd2, &sc, &sc, &g).l_pos - base).abs() < 1e-12);
    let one = loss_locality(
        &pc[..1],
        &pc[..1],
        &sc[..1],
        &sc[..1],
        &NeighborGraph::build(&pc[..1], 5),
    );
    assert_eq!((one.l_pos, one.l_cov), (0.0, 0.0));
}

#[test]
fn depth_matches_masked_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let (w, h) = (rng.random_range(3..16), rng.random_range(3..16));
        let gen = |rng: &mut ChaCha8Rng| -> Image<f64> {
            Image::from_vec(
                w,
                h,
                1,
                (0..w * h).map(|_| rng.random_range(0.5..3.0)).collect(),
            )
            .unwrap()
        };
        let (pred, gt) = (gen(&mut rng), gen(&mut rng));
        let alpha = Image::from_vec(
            w,
            h,
            1,
            (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let m = random_mask(&mut rng, w, h, 0.7);
        let (mut s, mut n) = (0.0f64, 0usize);
        for p in 0..w * h {
            if m.data[p] && alpha.data[p] > 0.5 {
                s += (pred.data[p] - gt.data[p]).abs();
                n += 1;
            }
        }
        let expect = if n == 0 { 0.0 } else { s / n as f64 };
        assert!((loss_depth(&pred, &gt, &alpha, &m).value - expect).abs() < 1e-9);
    }
}

fn oracle_pyramid(img: &Image<f64>) -> Vec<f64> {
    let (mut w, mut h) = (img.width, img.height);
    let mut planes: Vec<Vec<f64>> = (0..3)
        .map(|c| (0..w * h).map(|p| img.data[3 * p + c]).collect())
        .collect();
    let mut feats = Vec::new();
    for level in 0..3 {
        if level > 0 {
            if w < 4 || h < 4 {
                break;
            }
            let (nw, nh) = (w / 2, h / 2);
            planes = planes
                .iter()
                .map(|pl| {
                    let mut o = vec![0.0; nw * nh];
                    for y in 0..nh {
                        for x in 0..nw {
                            o[y * nw + x] = (pl[2 * y * w + 2 * x]
                                + pl[2 * y * w + 2 * x + 1]
                                + pl[(2 * y + 1) * w + 2 * x]
                                + pl[(2 * y + 1) * w + 2 * x + 1])
                                / 4.0;
                        }
                    }
                    o
                })
                .collect();
            (w, h) = (nw, nh);
        }
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                for pl in &planes {
                    let gx = pl[y * w + x + 1] - pl[y * w + x];
                    let gy = pl[(y + 1) * w + x] - pl[y * w + x];
                    feats.push((gx * gx + gy * gy + 1e-6).sqrt());
                }
            }
        }
    }
    feats
}

#[test]
fn perceptual_matches_independent_pyramid() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (w, h) in [(16, 16), (21, 13), (7, 9)] {
        let a = random_image(&mut rng, w, h);
        let b = random_image(&mut rng, w, h);
        let (fa, fb) = (oracle_pyramid(&a), oracle_pyramid(&b));
        let dot: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
        let na = fa.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = fb.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expect = 1.0 - dot / (na * nb);
        let got = loss_perceptual(&a, &b, None, &GradientPyramid::default()).value;
        assert!(
            (got - expect).abs() / expect < 1e-6,
            "{w}x{h}: {got} vs {expect}"
        );
    }
}

fn textbook_adam(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: i32, lr: f64) {
    for i in 0..p.len() {
        m[i] = 0.9 * m[i] + (1.0 - 0.9) * g[i];
        v[i] = 0.999 * v[i] + (1.0 - 0.999) * g[i] * g[i];
        let mh = m[i] / (1.0 - 0.9f64.powi(t));
        let vh = v[i] / (1.0 - 0.999f64.powi(t));
        p[i] -= lr * mh / (vh.sqrt() + 1e-15);
    }
}

#[test]
fn adam_is_bitwise_textbook() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 64;
    let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut q = p.clone();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut st = AdamState::new(n);
    for t in 1..=100 {
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lr = rng.random_range(1e-4..1e-2);
        adam_step(&mut p, &g, &mut st, lr, &AdamConfig::default());
        textbook_adam(&mut q, &g, &mut m, &mut v, t, lr);
    }
    assert_eq!(p, q);
    assert_eq!(st.m, m);
    assert_eq!(st.v, v);
}

#[test]
fn adam_closed_forms() {
    let cfg = AdamConfig::default();
    let mut p = vec![0.5f64];
    let mut st = AdamState::new(1);
    adam_step(&mut p, &[1.0], &mut st, 0.1, &cfg);
    let (m0, v0) = (st.m[0], st.v[0]);
    let before = p[0];
    adam_step(&mut p, &[0.0], &mut st, 0.1, &cfg);
    assert_eq!(p[0], before);
    assert!(st.m[0] < m0 && st.v[0] < v0 && st.m[0] > 0.0);

    // constant gradient: steps approach lr · sign(g)
    let mut p = vec![0.0f64];
    let mut st = AdamState::new(1);
    let mut last = 0.0;
    for _ in 0..5000 {
        let prev = p[0];
        adam_step(&mut p, &[-3.0], &mut st, 1e-3, &cfg);
        last = p[0] - prev;
    }
    assert!((last - 1e-3).abs() < 1e-9);

    let mut p = vec![1.0f64, 2.0];
    let mut st = AdamState::new(2);
    assert_eq!(adam_step(&mut p, &[f64::NAN, 1.0], &mut st, 0.1, &cfg), 1);
    assert_eq!(p[0], 1.0);
    assert_eq!(st.m[0], 0.0);
}

#[test]
fn densify_count_matches_rule_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cfg = DensifyConfig::default();
    for _ in 0..20 {
        let n = rng.random_range(1..80);
        let diag = 4.0;
        let surfels: Vec<GaussianSurfel<f64>> = (0..n)
            .map(|_| {
                let s = [rng.random_range(0.005..0.5), rng.random_range(0.005..0.5)];
                GaussianSurfel::new(
                    Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(1.0..3.0),
                    ),
                    Quat::new(
                        rng.random_range(0.1..1.0),
                        rng.random_range(-1.0..1.0),
                        0.3,
                        0.0,
                    ),
                    s,
                    rng.random_range(-7.0..3.0),
                    vec![0.0; 3],
                )
            })
            .collect();
        let mut st = DensifyStats::new(n);
        for i in 0..n {
            st.touch_count[i] = rng.random_range(0..20);
            st.homo_grad[i] = st.touch_count[i] as f64 * rng.random_range(0.0..4e-4);
        }
        let shrink = 1.0 / 1.6;
        let survives = |s: [f64; 2], logit: f64| {
            1.0 / (1.0 + (-logit).exp()) >= 0.005 && s[0].max(s[1]) <= 0.1 * diag
        };
        let mut expect = 0;
        for (i, s) in surfels.iter().enumerate() {
            let sc = s.scales();
            let mean = if st.touch_count[i] == 0 {
                0.0
            } else {
                st.homo_grad[i] / st.touch_count[i] as f64
            };
            let ok = survives(sc, s.opacity_logit) as usize;
            if mean <= 2e-4 {
                expect += ok;
            } else if sc[0].max(sc[1]) > 0.01 * diag {
                expect += 2 * survives([sc[0] * shrink, sc[1] * shrink], s.opacity_logit) as usize;
            } else {
                expect += 2 * ok;
            }
        }
        let out = densify_and_prune(&surfels, &st, &cfg, diag, &mut rng);
        assert_eq!(out.surfels.len(), expect);
        assert_eq!(out.graph.len(), expect);
        for (i, nb) in out.graph.neighbors.iter().enumerate() {
            assert_eq!(nb.len(), 5.min(expect.saturating_sub(1)));
            assert!(!nb.contains(&(i as u32)));
        }
    }
}
