use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random values bounded away from zero, for ops with a kink there.
fn random_off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(y ⊙ c)` for a fixed random `c`, so every output coordinate carries
/// a distinct weight.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> crate::Result<Var> {
    let c = tape.constant(random(tape.shape(y), seed));
    let p = tape.mul(y, c)?;
    tape.sum(p)
}

// ---------------------------------------------------------------------------
// Examples

#[test]
fn conv_identity_kernel_returns_input() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let w = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
    let y = tape.conv2d(x, w, None, (1, 1), (0, 0)).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn conv_sliding_sum_with_padding() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 1, 1, 3], &[1.0, 2.0, 3.0]));
    let w = tape.constant(t(&[1, 1, 1, 3], &[1.0, 1.0, 1.0]));
    let y = tape.conv2d(x, w, None, (1, 1), (0, 1)).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 1, 3]);
    assert_eq!(tape.value(y).data(), &[3.0, 6.0, 5.0]);
}

#[test]
fn conv_zero_weight_gives_bias() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random(&[2, 3, 4, 5], 1));
    let w = tape.constant(Tensor::zeros(&[2, 3, 3, 1]));
    let b = tape.constant(t(&[2], &[0.5, -1.5]));
    let y = tape.conv2d(x, w, Some(b), (1, 1), (1, 0)).unwrap();
    let v = tape.value(y);
    assert_eq!(v.shape(), &[2, 2, 4, 5]);
    for bi in 0..2 {
        for c in 0..2 {
            for h in 0..4 {
                for w in 0..5 {
                    assert_eq!(v.at(&[bi, c, h, w]), [0.5, -1.5][c]);
                }
            }
        }
    }
}

#[test]
fn conv_output_extent_floors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 5, 4]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 2, 3]));
    let y = tape.conv2d(x, w, None, (2, 2), (0, 1)).unwrap();
    // (5-2)/2+1 = 2, (4+2-3)/2+1 = 2
    assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
}

#[test]
fn conv_channel_mismatch_names_axis() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let w = tape.constant(Tensor::zeros(&[1, 3, 1, 1]));
    let err = tape.conv2d(x, w, None, (1, 1), (0, 0)).unwrap_err();
    match err {
        Error::Shape { axis, .. } => assert!(axis.contains("input channels"), "{axis}"),
        other => panic!("unexpected {other:?}"),
    }
    let w = tape.constant(Tensor::zeros(&[1, 2, 5, 1]));
    let err = tape.conv2d(x, w, None, (1, 1), (0, 0)).unwrap_err();
    assert!(err.to_string().contains("kernel height"), "{err}");
}

fn bn_once(x: Tensor<f64>, gamma: f64, beta: f64) -> Tensor<f64> {
    let c = x.shape()[1];
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::full(&[c], gamma));
    let b = tape.constant(Tensor::full(&[c], beta));
    let mut stats = RunningStats::new(c);
    let y = tape.batch_norm(xv, g, b, &mut stats, Mode::Train, 1e-5, 0.1).unwrap();
    tape.value(y).clone()
}

#[test]
fn batch_norm_constant_channel_is_zero() {
    let x = Tensor::full(&[2, 3, 2, 2], 4.0);
    let y = bn_once(x, 1.0, 0.0);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn batch_norm_zero_gamma_gives_beta() {
    let y = bn_once(random(&[3, 2, 2, 4], 5), 0.0, 0.75);
    assert!(y.data().iter().all(|&v| v == 0.75));
}

#[test]
fn batch_norm_train_output_is_standardised() {
    let x = random(&[4, 3, 5, 6], 9).map(|v| 3.0 * v + 2.0);
    let y = bn_once(x, 1.0, 0.0);
    let (b, c, plane) = (4, 3, 30);
    for ch in 0..c {
        let vals: Vec<f64> = (0..b)
            .flat_map(|bi| y.data()[(bi * c + ch) * plane..][..plane].to_vec())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5, "mean {mean}");
        // eps = 1e-5 shrinks the variance by var/(var+eps).
        assert!((var - 1.0).abs() < 1e-5, "var {var}");
    }
}

#[test]
fn batch_norm_rejects_degenerate_batch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
    let g = tape.constant(Tensor::full(&[2], 1.0));
    let b = tape.constant(Tensor::zeros(&[2]));
    let mut stats = RunningStats::new(2);
    let err = tape.batch_norm(x, g, b, &mut stats, Mode::Train, 1e-5, 0.1).unwrap_err();
    assert!(matches!(err, Error::DegenerateBatch { count: 1 }));
    // eval mode works on a single value
    assert!(tape.batch_norm(x, g, b, &mut stats, Mode::Eval, 1e-5, 0.1).is_ok());
}

#[test]
fn batch_norm_updates_running_stats_in_train_only() {
    let x = t(&[2, 1, 1, 2], &[1.0, 3.0, 5.0, 7.0]);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::full(&[1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let mut stats = RunningStats::new(1);
    tape.batch_norm(xv, g, b, &mut stats, Mode::Train, 1e-5, 0.5).unwrap();
    // batch mean 4, biased var 5, unbiased 20/3
    assert_eq!(stats.mean, vec![2.0]);
    assert!((stats.var[0] - (0.5 + 0.5 * 20.0 / 3.0)).abs() < 1e-15);
    let snapshot = stats.clone();
    let y = tape.batch_norm(xv, g, b, &mut stats, Mode::Eval, 0.0, 0.5).unwrap();
    assert_eq!(stats, snapshot);
    let expect = (1.0 - 2.0) / snapshot.var[0].sqrt();
    assert!((tape.value(y).data()[0] - expect).abs() < 1e-15);
}

#[test]
fn leaky_relu_values_and_kink_convention() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(t(&[3], &[-2.0, 3.0, 0.0]));
    let y = tape.leaky_relu(x, 0.1).unwrap();
    let v = tape.value(y).data().to_vec();
    assert!((v[0] + 0.2).abs() < 1e-15);
    assert_eq!(&v[1..], &[3.0, 0.0]);
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.1, 1.0, 1.0]);
}

#[test]
fn tanh_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[3], &[0.0, 1.0, 50.0]));
    let y = tape.tanh(x).unwrap();
    let v = tape.value(y).data();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 0.761_594_155_955_764_9).abs() < 1e-15);
    assert!(v[2] <= 1.0 && v[2] > 0.99);
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let ones = tape.constant(t(&[2, 1], &[1.0, 1.0]));
    let y = tape.batched_matmul(a, ones).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 7.0]);

    let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let y = tape.batched_matmul(eye, a).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let zero = tape.constant(Tensor::zeros(&[2, 2]));
    let y = tape.batched_matmul(zero, a).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_broadcasts_leading_axes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(random(&[3, 1, 2, 4], 2));
    let b = tape.constant(random(&[2, 4, 5], 3));
    let y = tape.batched_matmul(a, b).unwrap();
    assert_eq!(tape.shape(y), &[3, 2, 2, 5]);
    let (va, vb, vy) = (tape.value(a), tape.value(b), tape.value(y));
    for i in 0..3 {
        for j in 0..2 {
            for r in 0..2 {
                for c in 0..5 {
                    let s: f64 = (0..4).map(|k| va.at(&[i, 0, r, k]) * vb.at(&[j, k, c])).sum();
                    assert!((vy.at(&[i, j, r, c]) - s).abs() < 1e-14);
                }
            }
        }
    }
}

#[test]
fn matmul_inner_mismatch() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.batched_matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("inner dimension"), "{err}");
    let c = tape.constant(Tensor::zeros(&[2, 3, 4]));
    let d = tape.constant(Tensor::zeros(&[3, 4, 1]));
    assert!(tape.batched_matmul(c, d).is_err());
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.param(t(&[1, 2], &[0.0, 0.0]));
    let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(z).unwrap().data(), &[-0.5, 0.5]);
    assert!(matches!(
        tape.softmax_cross_entropy(z, &[2]),
        Err(Error::LabelOutOfRange { label: 2, classes: 2 })
    ));
}

#[test]
fn reshape_round_trip_is_bit_exact() {
    let x = random(&[4, 12, 5], 11);
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(x.clone());
    let r = tape.reshape(v, &[4, 4, 15]).unwrap();
    let back = tape.reshape(r, &[4, 12, 5]).unwrap();
    assert_eq!(tape.value(back), &x);
    assert!(tape.reshape(v, &[7, 7]).is_err());
}

#[test]
fn transpose_round_trip_is_bit_exact() {
    let x = random(&[2, 3, 4, 5], 12);
    let axes = [3, 1, 0, 2];
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(x.clone());
    let p = tape.transpose(v, &axes).unwrap();
    let back = tape.transpose(p, &inverse_permutation(&axes)).unwrap();
    assert_eq!(tape.value(back), &x);
}

#[test]
fn global_avg_pool_of_constant() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[2, 3, 4, 5], 2.5));
    let y = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.shape(y), &[2, 3]);
    assert!(tape.value(y).data().iter().all(|&v| v == 2.5));
}

#[test]
fn softmax_rows_sum_to_one() {
    let x = random(&[6, 7], 13).map(|v| 20.0 * v);
    let p = softmax_rows(x.data(), 7);
    for row in p.chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn cross_entropy_is_non_negative() {
    for seed in 0..20 {
        let x = random(&[3, 4], seed).map(|v| 10.0 * v);
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(x);
        let l = tape.softmax_cross_entropy(z, &[0, 1, 3]).unwrap();
        assert!(tape.value(l).item() >= 0.0);
    }
}

// ---------------------------------------------------------------------------
// Tape semantics

#[test]
fn loss_gradient_of_itself_is_one() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(random(&[3], 1));
    let y = tape.sum(x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(y).unwrap().data(), &[1.0]);
}

#[test]
fn constants_and_dead_branches_get_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(random(&[3], 1));
    let c = tape.constant(random(&[3], 2));
    let unused = tape.param(random(&[3], 3));
    let _dead = tape.tanh(unused).unwrap();
    let p = tape.mul(x, c).unwrap();
    let l = tape.sum(p).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.get(x).is_some());
    assert!(g.get(c).is_none());
    assert!(g.get(unused).is_none());
}

#[test]
fn cleared_tape_rejects_old_vars() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(random(&[2], 1));
    tape.clear();
    assert!(tape.is_empty());
    assert!(matches!(tape.tanh(x), Err(Error::StaleVar { .. })));
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(random(&[2], 1));
    assert!(matches!(tape.backward(x), Err(Error::NonScalar(_))));
}

#[test]
fn add_distributes_gradient_exactly() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(random(&[2, 3], 1));
    let b = tape.param(random(&[2, 3], 2));
    let s = tape.add(a, b).unwrap();
    let l = weighted_sum(&mut tape, s, 3).unwrap();
    let c = random(&[2, 3], 3);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(a).unwrap(), &c);
    assert_eq!(g.get(b).unwrap(), &c);
}

#[test]
fn concat_splits_gradient_without_cross_talk() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(random(&[2, 1, 3], 1));
    let b = tape.param(random(&[2, 2, 3], 2));
    let y = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.shape(y), &[2, 3, 3]);
    let l = weighted_sum(&mut tape, y, 4).unwrap();
    let c = random(&[2, 3, 3], 4);
    let g = tape.backward(l).unwrap();
    let (ga, gb) = (g.get(a).unwrap(), g.get(b).unwrap());
    for i in 0..2 {
        for k in 0..3 {
            assert_eq!(ga.at(&[i, 0, k]), c.at(&[i, 0, k]));
            for j in 0..2 {
                assert_eq!(gb.at(&[i, j, k]), c.at(&[i, j + 1, k]));
            }
        }
    }
}

#[test]
fn forward_backward_is_deterministic() {
    let run = || {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(random(&[2, 3, 5, 4], 7));
        let w = tape.param(random(&[4, 3, 3, 1], 8));
        let y = tape.conv2d(x, w, None, (1, 1), (1, 0)).unwrap();
        let y = tape.tanh(y).unwrap();
        let l = weighted_sum(&mut tape, y, 9).unwrap();
        let g = tape.backward(l).unwrap();
        (
            tape.value(l).item().to_bits(),
            g.get(w).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

// ---------------------------------------------------------------------------
// Gradient checks

const EPS: f64 = 1e-4;

#[test]
fn grad_check_square_sum() {
    let x = random(&[7], 21);
    let err = grad_check(
        |t, x| {
            let sq = t.mul(x, x)?;
            t.sum(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn grad_check_constant_function_is_zero() {
    let x = random(&[4], 22);
    let report = grad_check_many(
        |t, _| {
            let c = t.constant(Tensor::full(&[2], 3.0));
            t.sum(c)
        },
        &[x],
        EPS,
    )
    .unwrap();
    assert_eq!(report.max_rel_error, 0.0);
    assert_eq!(report.analytic, 0.0);
    assert_eq!(report.numeric, 0.0);
}

#[test]
fn grad_check_rejects_non_scalar() {
    let x = random(&[4], 22);
    assert!(matches!(grad_check(|t, x| t.tanh(x), &x, EPS), Err(Error::NonScalar(_))));
}

fn check_many(seeds: &[u64], tol: f64, f: impl Fn(u64) -> f64) {
    for &s in seeds {
        let e = f(s);
        assert!(e < tol, "seed {s}: max relative error {e} >= {tol}");
    }
}

#[test]
fn grad_check_conv2d() {
    check_many(&[1, 2, 3], 1e-6, |s| {
        let inputs = [random(&[2, 3, 4, 5], s), random(&[2, 3, 3, 2], s + 10), random(&[2], s + 20)];
        grad_check_many(
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), (1, 2), (1, 1))?;
                weighted_sum(t, y, s + 30)
            },
            &inputs,
            EPS,
        )
        .unwrap()
        .max_rel_error
    });
}

#[test]
fn grad_check_tanh() {
    check_many(&[1, 2, 3], 1e-6, |s| {
        grad_check(
            |t, x| {
                let y = t.tanh(x)?;
                weighted_sum(t, y, s + 1)
            },
            &random(&[3, 4], s),
            EPS,
        )
        .unwrap()
    });
}

#[test]
fn grad_check_matmul_broadcast() {
    check_many(&[1, 2, 3], 1e-6, |s| {
        let inputs = [random(&[2, 1, 3, 4], s), random(&[3, 4, 2], s + 5)];
        grad_check_many(
            |t, v| {
                let y = t.batched_matmul(v[0], v[1])?;
                weighted_sum(t, y, s + 7)
            },
            &inputs,
            EPS,
        )
        .unwrap()
        .max_rel_error
    });
}

#[test]
fn grad_check_linear() {
    check_many(&[1, 2, 3], 1e-6, |s| {
        let inputs = [random(&[3, 4], s), random(&[5, 4], s + 1), random(&[5], s + 2)];
        grad_check_many(
            |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                weighted_sum(t, y, s + 3)
            },
            &inputs,
            EPS,
        )
        .unwrap()
        .max_rel_error
    });
}

#[test]
fn grad_check_batch_norm_train_and_eval() {
    for mode in [Mode::Train, Mode::Eval] {
        check_many(&[1, 2, 3], 1e-4, |s| {
            let inputs = [random(&[3, 2, 2, 3], s), random(&[2], s + 1), random(&[2], s + 2)];
            grad_check_many(
                |t, v| {
                    let mut stats = RunningStats::new(2);
                    stats.mean = vec![0.1, -0.2];
                    stats.var = vec![0.5, 2.0];
                    let y = t.batch_norm(v[0], v[1], v[2], &mut stats, mode, 1e-5, 0.1)?;
                    weighted_sum(t, y, s + 3)
                },
                &inputs,
                EPS,
            )
            .unwrap()
            .max_rel_error
        });
    }
}

#[test]
fn grad_check_leaky_relu() {
    check_many(&[1, 2, 3], 1e-4, |s| {
        grad_check(
            |t, x| {
                let y = t.leaky_relu(x, 0.1)?;
                weighted_sum(t, y, s + 1)
            },
            &random_off_zero(&[4, 3], s),
            EPS,
        )
        .unwrap()
    });
}

#[test]
fn grad_check_skips_probes_across_kinks() {
    let x = t(&[3], &[0.5, 2e-5, -1.0]);
    let r = grad_check_many(
        |t, v| {
            let y = t.leaky_relu(v[0], 0.1)?;
            t.sum(y)
        },
        &[x],
        EPS,
    )
    .unwrap();
    assert_eq!((r.coordinates, r.refined, r.skipped), (3, 1, 0));
    assert!(r.max_rel_error < 1e-10);
}

#[test]
fn grad_check_softmax_cross_entropy() {
    check_many(&[1, 2, 3], 1e-4, |s| {
        grad_check(|t, z| t.softmax_cross_entropy(z, &[0, 2, 1, 2]), &random(&[4, 3], s), EPS).unwrap()
    });
}

#[test]
fn grad_check_shape_ops() {
    check_many(&[1, 2, 3], 1e-4, |s| {
        let inputs = [random(&[2, 3, 4], s), random(&[2, 1, 4], s + 1), random(&[4, 4], s + 2)];
        grad_check_many(
            |t, v| {
                let c = t.concat(&[v[0], v[1]], 1)?;
                let p = t.transpose(c, &[2, 0, 1])?;
                let r = t.reshape(p, &[4, 2, 4])?;
                let r = t.reshape(r, &[2, 4, 4])?;
                let a = t.add_suffix(c, v[2])?;
                let a = t.scale(a, 0.5)?;
                let a = t.transpose(a, &[0, 2, 1])?;
                let m = t.add(r, a)?;
                let seg = t.segment_sum(m, &[1, 1], 2)?;
                let g = t.reshape(seg, &[2, 4, 2, 2])?;
                let g = t.global_avg_pool(g)?;
                weighted_sum(t, g, s + 3)
            },
            &inputs,
            EPS,
        )
        .unwrap()
        .max_rel_error
    });
}
