//! Tape gradients of every op against central differences.

use mgfn::tensor::{grad_check, GradCheckConfig, Result, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random weighted sum, so every output entry gets a distinct upstream gradient.
fn scalarize(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let n = tape.value(v).numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let weighted = tape.mul_const(v, w)?;
    Ok(tape.sum(weighted))
}

fn check<F>(f: F, params: &[Tensor])
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let report = grad_check(f, params, GradCheckConfig::default()).unwrap();
    assert!(
        report.passed(),
        "max relative error {:e}: {:?}",
        report.max_rel_error(),
        report.params
    );
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Values kept away from zero so kinks of `abs` and `relu` are not straddled.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let t = random(shape, seed);
    let data = t
        .data()
        .iter()
        .map(|&v| {
            if v.abs() < 0.05 {
                v.signum() * 0.05 + v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn quadratic_matches_analytic() {
    let p = random(&[7], 1);
    let mut tape = Tape::new();
    let v = tape.param(p.clone());
    let sq = tape.mul(v, v).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    for (g, x) in tape.grad(v).unwrap().iter().zip(p.data()) {
        assert!((g - 2.0 * x).abs() <= 1e-8);
    }
}

#[test]
fn constant_objective_has_zero_gradient() {
    let report = grad_check(
        |tape, _| Ok(tape.constant(Tensor::scalar(3.0))),
        &[random(&[4], 2)],
        GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv1d(b in 1usize..3, l in 1usize..6, p in 1usize..3, cin in 1usize..4, cout in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]), seed in any::<u64>()) {
        check(
            |t, v| {
                let y = t.conv1d(v[0], v[1], v[2])?;
                scalarize(t, y, seed)
            },
            &[random(&[b, l, p, cin], seed), random(&[cout, cin, k], seed ^ 1), random(&[cout], seed ^ 2)],
        );
    }

    #[test]
    fn linear_and_activations(rows in 1usize..4, din in 1usize..5, dout in 1usize..5, seed in any::<u64>()) {
        check(
            |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                let g = t.gelu(y);
                let s = t.sigmoid(y);
                let m = t.mul(g, s)?;
                scalarize(t, m, seed)
            },
            &[random(&[rows, din], seed), random(&[dout, din], seed ^ 1), random(&[dout], seed ^ 2)],
        );
    }

    #[test]
    fn elementwise(n in 1usize..12, seed in any::<u64>()) {
        check(
            |t, v| {
                let a = t.abs(v[0]);
                let r = t.relu(v[1]);
                let s = t.sub(a, r)?;
                let s = t.scale(s, 1.7);
                let s = t.add_scalar(s, -0.3);
                let p = t.mul(s, v[1])?;
                let q = t.add(p, v[0])?;
                scalarize(t, q, seed)
            },
            &[away_from_zero(&[n], seed), away_from_zero(&[n], seed ^ 1)],
        );
    }

    #[test]
    fn l2_norm(rows in 1usize..5, c in 1usize..9, seed in any::<u64>()) {
        check(
            |t, v| {
                let y = t.l2_norm(v[0])?;
                scalarize(t, y, seed)
            },
            &[away_from_zero(&[rows, c], seed)],
        );
    }

    #[test]
    fn softmax(a in 1usize..4, b in 1usize..5, c in 1usize..4, axis in 0usize..3, seed in any::<u64>()) {
        check(
            |t, v| {
                let y = t.softmax(v[0], axis)?;
                scalarize(t, y, seed)
            },
            &[random(&[a, b, c], seed)],
        );
    }

    #[test]
    fn clip_attention(b in 1usize..3, tt in 1usize..5, p in 1usize..3, d in 1usize..4, seed in any::<u64>()) {
        check(
            |t, v| {
                let a = t.clip_gram(v[0], v[1])?;
                let w = t.softmax(a, 2)?;
                let y = t.clip_mix(w, v[2])?;
                scalarize(t, y, seed)
            },
            &[random(&[b, tt, p, d], seed), random(&[b, tt, p, d], seed ^ 1), random(&[b, tt, p, d], seed ^ 2)],
        );
    }

    #[test]
    fn sac(rows in 1usize..4, d in 1usize..10, half in 0usize..4, scale in 0.1f64..2.0, seed in any::<u64>()) {
        check(
            |t, v| {
                let y = t.sac(v[0], half, scale)?;
                scalarize(t, y, seed)
            },
            &[random(&[rows, d], seed)],
        );
    }

    #[test]
    fn reductions_and_selection(a in 1usize..4, b in 1usize..5, seed in any::<u64>()) {
        let picks: Vec<usize> = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| rng.gen_range(0..a * b)).collect()
        };
        check(
            |t, v| {
                let m = t.mean_axis(v[0], 1)?;
                let s = t.sum(m);
                let flat = t.reshape(v[0], &[a * b])?;
                let g = t.gather(flat, picks.clone())?;
                let mg = t.mean(g);
                let sig = t.sigmoid(g);
                let ce = t.bce(sig, (0..picks.len()).map(|i| (i % 2) as f64).collect(), 1e-7)?;
                let x = t.add(s, mg)?;
                t.add(x, ce)
            },
            &[random(&[a, b], seed)],
        );
    }
}
