//! Brute-force reference implementations and random instance generators
//! shared by the integration tests.
#![allow(dead_code)]

use mgfn::io::Label;
use mgfn::losses::MagnitudeSet;
use rand::Rng;

/// Cross-correlation of `x: [L, Cin]` with `w: [Cout, Cin, K]`, zero padded
/// by `(K - 1) / 2`, as three nested loops.
pub fn conv1d(
    x: &[f64],
    len: usize,
    cin: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    b: &[f64],
) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let mut out = vec![0.0; len * cout];
    for l in 0..len {
        for o in 0..cout {
            let mut acc = b[o];
            for kk in 0..k {
                let src = l as isize + kk as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                for i in 0..cin {
                    acc += w[(o * cin + i) * k + kk] * x[src as usize * cin + i];
                }
            }
            out[l * cout + o] = acc;
        }
    }
    out
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Indices sorted by descending value, ties by ascending index; first `k`.
pub fn topk(x: &[f64], k: usize) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    (idx.iter().map(|&i| x[i]).collect(), idx)
}

/// `out[k] = x[k] * sum of x[j]` over `|j - k| <= window / 2` inside the row.
pub fn sac(x: &[f64], window: usize) -> Vec<f64> {
    let half = (window / 2) as isize;
    let d = x.len() as isize;
    (0..d)
        .map(|k| {
            let mut acc = 0.0;
            for j in k - half..=k + half {
                if (0..d).contains(&j) {
                    acc += x[k as usize] * x[j as usize];
                }
            }
            acc
        })
        .collect()
}

/// Enumerates every magnitude pair of every video pair: largest distance for
/// same-category pairs, smallest for cross pairs, hinge on the latter.
pub fn mc_loss(sets: &[MagnitudeSet], margin: f64) -> f64 {
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (i, a) in sets.iter().enumerate() {
        for (j, b) in sets.iter().enumerate() {
            let kind = match (a.label, b.label) {
                (Label::Normal, Label::Normal) if i < j => 0,
                (Label::Abnormal, Label::Abnormal) if i < j => 1,
                (Label::Normal, Label::Abnormal) => 2,
                _ => continue,
            };
            let dists = a
                .magnitudes
                .iter()
                .flat_map(|x| b.magnitudes.iter().map(move |y| (x - y).abs()));
            let term = if kind == 2 {
                let d = dists.fold(f64::INFINITY, f64::min);
                (margin - d).max(0.0)
            } else {
                dists.fold(0.0, f64::max)
            };
            sums[kind] += term;
            counts[kind] += 1;
        }
    }
    (0..3)
        .filter(|&c| counts[c] > 0)
        .map(|c| sums[c] / counts[c] as f64)
        .sum()
}

/// Counts positive-negative pairs directly.
pub fn roc_auc(s: &[f64], y: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Precision at each positive, counting everything ranked at or above it
/// (strictly higher score, or equal score and not later in the input).
pub fn average_precision(s: &[f64], y: &[bool]) -> f64 {
    let ahead = |i: usize, j: usize| s[j] > s[i] || (s[j] == s[i] && j <= i);
    let mut total = 0.0;
    let mut n_pos = 0;
    for i in (0..s.len()).filter(|&i| y[i]) {
        n_pos += 1;
        let above: Vec<usize> = (0..s.len()).filter(|&j| ahead(i, j)).collect();
        let hits = above.iter().filter(|&&j| y[j]).count();
        total += hits as f64 / above.len() as f64;
    }
    total / n_pos as f64
}

/// Random values drawn either continuously or from a few levels, so that
/// ties occur in a good share of instances.
pub fn values<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    if rng.gen_bool(0.5) {
        (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()
    } else {
        let levels = rng.gen_range(1..5);
        (0..n)
            .map(|_| f64::from(rng.gen_range(0..levels)) / 4.0)
            .collect()
    }
}

/// Random labels with both classes present.
pub fn labels<R: Rng>(n: usize, rng: &mut R) -> Vec<bool> {
    assert!(n >= 2);
    let mut y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    let pos = rng.gen_range(0..n);
    let neg = (pos + rng.gen_range(1..n)) % n;
    y[pos] = true;
    y[neg] = false;
    y
}

/// Balanced batch of top-k magnitude lists (`B/2` normal then `B/2` abnormal).
pub fn magnitude_sets<R: Rng>(batch: usize, k: usize, rng: &mut R) -> Vec<MagnitudeSet> {
    let continuous = rng.gen_bool(0.5);
    (0..batch)
        .map(|video| {
            let mut m: Vec<f64> = (0..k)
                .map(|_| {
                    if continuous {
                        rng.gen_range(0.0..150.0)
                    } else {
                        f64::from(rng.gen_range(0..6)) * 30.0
                    }
                })
                .collect();
            m.sort_by(|a, b| b.total_cmp(a));
            MagnitudeSet {
                video,
                label: if video < batch / 2 {
                    Label::Normal
                } else {
                    Label::Abnormal
                },
                magnitudes: m,
                indices: (0..k).collect(),
            }
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub mod checks {
    //! Randomized comparisons of library routines against the oracles above.
    //! Each returns the largest deviation seen (or mismatch count for
    //! discrete outputs) over `instances` draws.

    use mgfn::focus::{self, SacConfig};
    use mgfn::losses;
    use mgfn::metrics;
    use mgfn::tensor::{self, Tape, Tensor};
    use rand::Rng;

    use super::*;

    pub fn conv1d<R: Rng>(instances: usize, rng: &mut R) -> f64 {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let len = rng.gen_range(1..9);
            let cin = rng.gen_range(1..5);
            let cout = rng.gen_range(1..5);
            let k = [1, 3, 5][rng.gen_range(0..3)];
            let x = values(len * cin, rng);
            let w = values(cout * cin * k, rng);
            let b = values(cout, rng);
            let got = tensor::conv1d_forward(
                &Tensor::new(&[len, cin], x.clone()).unwrap(),
                &Tensor::new(&[cout, cin, k], w.clone()).unwrap(),
                &Tensor::new(&[cout], b.clone()).unwrap(),
                (k - 1) / 2,
            )
            .unwrap();
            worst = worst.max(max_abs_diff(
                got.data(),
                &super::conv1d(&x, len, cin, &w, cout, k, &b),
            ));
        }
        worst
    }

    pub fn softmax<R: Rng>(instances: usize, rng: &mut R) -> f64 {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let x = values(rng.gen_range(1..17), rng);
            let got = tensor::softmax_forward(&Tensor::from_vec(x.clone()).unwrap(), 0).unwrap();
            worst = worst.max(max_abs_diff(got.data(), &super::softmax(&x)));
        }
        worst
    }

    pub fn topk<R: Rng>(instances: usize, rng: &mut R) -> usize {
        let mut mismatches = 0;
        for _ in 0..instances {
            let x = values(rng.gen_range(1..33), rng);
            let k = rng.gen_range(1..=x.len());
            if tensor::topk_slice(&x, k).unwrap() != super::topk(&x, k) {
                mismatches += 1;
            }
        }
        mismatches
    }

    pub fn sac<R: Rng>(instances: usize, rng: &mut R) -> f64 {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let d = rng.gen_range(1..17);
            let window = [1, 3, 5, 7][rng.gen_range(0..4)];
            let x = values(d, rng);
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::from_vec(x.clone()).unwrap());
            let config = SacConfig {
                window,
                ..SacConfig::default()
            };
            let out = focus::sac(&mut tape, v, &config).unwrap();
            worst = worst.max(max_abs_diff(
                tape.value(out).data(),
                &super::sac(&x, window),
            ));
        }
        worst
    }

    pub fn mc_loss<R: Rng>(instances: usize, rng: &mut R) -> f64 {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let batch = 2 * rng.gen_range(1..5);
            let k = rng.gen_range(1..5);
            let margin = [1.0, 10.0, 100.0][rng.gen_range(0..3)];
            let sets = magnitude_sets(batch, k, rng);
            let got = losses::mc_loss(&sets, margin).unwrap();
            worst = worst.max((got - super::mc_loss(&sets, margin)).abs());
        }
        worst
    }

    pub fn roc_auc<R: Rng>(instances: usize, rng: &mut R) -> f64 {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let n = rng.gen_range(2..41);
            let (s, y) = (values(n, rng), labels(n, rng));
            worst = worst.max((metrics::roc_auc(&s, &y).unwrap() - super::roc_auc(&s, &y)).abs());
        }
        worst
    }

    pub fn average_precision<R: Rng>(instances: usize, rng: &mut R) -> f64 {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let n = rng.gen_range(2..41);
            let (s, y) = (values(n, rng), labels(n, rng));
            let got = metrics::average_precision(&s, &y).unwrap();
            worst = worst.max((got - super::average_precision(&s, &y)).abs());
        }
        worst
    }
}

pub mod invariants {
    //! FAM and attention properties over random shapes.

    use mgfn::fam::{self, FamParams};
    use mgfn::glance::{self, GlanceParams};
    use mgfn::params::ParamStore;
    use mgfn::tensor::{Tape, Tensor};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub struct FamCase {
        pub shape: [usize; 4],
        pub shape_ok: bool,
        /// `max |(out(alpha) - F) - alpha * (out(1) - F)|` relative to `max |F|`.
        pub linearity_error: f64,
    }

    pub fn random_input<R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor {
        Tensor::uniform(shape, scale, rng)
    }

    pub fn fam_case<R: Rng>(rng: &mut R) -> FamCase {
        let shape = [
            rng.gen_range(1..=4),
            rng.gen_range(1..=8),
            rng.gen_range(1..=4),
            [32, 64, 128][rng.gen_range(0..3)],
        ];
        let alpha = rng.gen_range(0.0..2.0);
        let mut store = ParamStore::default();
        let mut init = ChaCha8Rng::seed_from_u64(rng.gen());
        let unit = FamParams::init(&mut store, shape[3], 3, 1.0, &mut init).unwrap();
        let scaled = FamParams { alpha, ..unit };
        let x = random_input(&shape, rng.gen_range(0.1..10.0), rng);

        let run = |params: &FamParams| {
            let mut tape = Tape::new();
            let vars = store.bind(&mut tape);
            let input = tape.constant(x.clone());
            let out = fam::amplify(&mut tape, &vars, input, params).unwrap();
            tape.value(out).clone()
        };
        let (base, out) = (run(&unit), run(&scaled));
        let scale = x.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let linearity_error = out
            .data()
            .iter()
            .zip(base.data())
            .zip(x.data())
            .map(|((o, b), f)| ((o - f) - alpha * (b - f)).abs() / scale)
            .fold(0.0, f64::max);
        FamCase {
            shape,
            shape_ok: out.shape() == shape && base.shape() == shape,
            linearity_error,
        }
    }

    pub struct AttentionCase {
        pub row_sum_error: f64,
        pub equivariant: bool,
    }

    pub fn attention_case<R: Rng>(rng: &mut R) -> AttentionCase {
        let (b, t, p) = (
            rng.gen_range(1..=3),
            rng.gen_range(1..=8),
            rng.gen_range(1..=3),
        );
        let dim = rng.gen_range(1..=8);
        let mut store = ParamStore::default();
        let mut init = ChaCha8Rng::seed_from_u64(rng.gen());
        let params =
            GlanceParams::init(&mut store, "g", dim, dim, rng.gen_bool(0.5), &mut init).unwrap();
        let x = random_input(&[b, t, p, dim], rng.gen_range(0.1..3.0), rng);

        let mut perm: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let row = p * dim;
        let permute = |src: &Tensor| {
            let mut out = Vec::with_capacity(src.numel());
            for bi in 0..b {
                for &ti in &perm {
                    let at = (bi * t + ti) * row;
                    out.extend_from_slice(&src.data()[at..at + row]);
                }
            }
            Tensor::new(src.shape(), out).unwrap()
        };

        let run = |input: &Tensor| {
            let mut tape = Tape::new();
            let vars = store.bind(&mut tape);
            let x = tape.constant(input.clone());
            let logits = glance::attention_logits(&mut tape, &vars, x, &params).unwrap();
            let weights = glance::attention_weights(&mut tape, logits).unwrap();
            let mixed = glance::vct(&mut tape, &vars, x, &params).unwrap();
            (tape.value(weights).clone(), tape.value(mixed).clone())
        };
        let (weights, mixed) = run(&x);
        let (_, mixed_perm) = run(&permute(&x));

        let mut row_sum_error: f64 = 0.0;
        for bi in 0..b {
            for t1 in 0..t {
                for pi in 0..p {
                    let s: f64 = (0..t).map(|t2| weights.get(&[bi, t1, t2, pi])).sum();
                    row_sum_error = row_sum_error.max((s - 1.0).abs());
                }
            }
        }
        AttentionCase {
            row_sum_error,
            equivariant: mixed_perm.shape() == mixed.shape()
                && mixed_perm.data() == permute(&mixed).data(),
        }
    }
}
