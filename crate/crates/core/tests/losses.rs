mod common;

use common::*;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vickd::losses::*;
use vickd::models::{Mode, Student, StudentConfig, StudentPreset, Teacher, TeacherConfig};
use vickd_tensor::Graph;

const TRIALS: usize = 100;

#[test]
fn every_loss_matches_central_differences() {
    for case in loss_cases() {
        let worst = worst_loss_error(&case, TRIALS);
        assert!(worst < 1e-4, "{}: worst relative error {worst:e}", case.name);
    }
}

#[test]
fn vicreg_terms_match_direct_formulas() {
    let gap = vicreg_oracle_gap(1000, 5);
    assert!(gap < 1e-6, "largest gap {gap:e}");
}

#[test]
fn vicreg_hand_cases() {
    assert_eq!(covariance_hand_case(), 4.0);
    assert_eq!(invariance_hand_case(), 2.0);
    let collapsed = eval(|g| {
        let z = g.constant(&[3, 2], vec![0.5, -1.0, 0.5, -1.0, 0.5, -1.0])?;
        vicreg_variance(g, z, 1.0, 1e-4)
    });
    assert!((collapsed - (1.0 - 1e-2)).abs() < 1e-12);
    let one_dim = eval(|g| {
        let z = g.constant(&[4, 1], vec![1.0, 2.0, -3.0, 0.5])?;
        vicreg_covariance(g, z)
    });
    assert_eq!(one_dim, 0.0);
}

#[test]
fn duplicating_columns_keeps_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let z = matrix(&mut rng, 6, 5, 0.8);
        let doubled: Vec<Vec<f64>> = z.iter().map(|r| r.iter().chain(r).copied().collect()).collect();
        let a = eval(|g| {
            let n = leaf(g, &z);
            vicreg_variance(g, n, 1.0, 1e-4)
        });
        let b = eval(|g| {
            let n = leaf(g, &doubled);
            vicreg_variance(g, n, 1.0, 1e-4)
        });
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn convex_combination_is_exact() {
    let gap = convexity_gap(100, 9);
    assert!(gap < 1e-6, "{gap:e}");
}

#[test]
fn endpoints_reduce_to_trades_and_vicreg() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, c, d) = (5, 4, 6);
    let y = labels(&mut rng, n, c);
    let clean = matrix(&mut rng, n, c, 2.0);
    let adv = matrix(&mut rng, n, c, 2.0);
    let z = matrix(&mut rng, n, d, 1.0);
    let zp = matrix(&mut rng, n, d, 1.0);
    let w = VicregWeights::default();
    let vic = |alpha: f64| {
        eval(|g| {
            let (a, b, p, q) = (leaf(g, &clean), leaf(g, &adv), leaf(g, &z), leaf(g, &zp));
            vic_kd_loss(g, a, b, p, q, &y, alpha, 6.0, &w).map(|t| t.total)
        })
    };
    let trades = ce_oracle(&clean, &y) + 6.0 * kl_oracle(&clean, &adv, 1.0);
    let reg = var_oracle(&zp, 1.0, 1e-4) + inv_oracle(&z, &zp) + cov_oracle(&zp);
    assert!((vic(1.0) - trades).abs() < 1e-10);
    assert!((vic(0.0) - reg).abs() < 1e-10);
    assert!((vic(0.5) - 0.5 * (trades + reg)).abs() < 1e-10);
}

#[test]
fn distillation_losses_match_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let (n, c) = (rng.random_range(1..6), rng.random_range(2..8));
        let y = labels(&mut rng, n, c);
        let s = matrix(&mut rng, n, c, 3.0);
        let a = matrix(&mut rng, n, c, 3.0);
        let t = matrix(&mut rng, n, c, 3.0);
        let w = rng.random_range(0.0..1.0);
        let temp = rng.random_range(1.0..5.0);
        let kd = eval(|g| {
            let (sn, tn) = (leaf(g, &s), leaf(g, &t));
            kd_loss(g, sn, tn, &y, w, temp)
        });
        let want = (1.0 - w) * ce_oracle(&s, &y) + w * temp * temp * kl_oracle(&t, &s, temp);
        assert!((kd - want).abs() < 1e-10);
        let ard = eval(|g| {
            let (an, tn) = (leaf(g, &a), leaf(g, &t));
            ard_loss(g, an, tn, &y, w, temp)
        });
        let want = (1.0 - w) * ce_oracle(&a, &y) + w * temp * temp * kl_oracle(&t, &a, temp);
        assert!((ard - want).abs() < 1e-10);
        let rslad = eval(|g| {
            let (sn, an, tn) = (leaf(g, &s), leaf(g, &a), leaf(g, &t));
            rslad_loss(g, sn, an, tn, w)
        });
        let want = (1.0 - w) * kl_oracle(&t, &s, 1.0) + w * kl_oracle(&t, &a, 1.0);
        assert!((rslad - want).abs() < 1e-10);
    }
}

#[test]
fn degenerate_weights_recover_simple_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = labels(&mut rng, 4, 3);
    let s = matrix(&mut rng, 4, 3, 2.0);
    let t = matrix(&mut rng, 4, 3, 2.0);
    let ce = ce_oracle(&s, &y);
    let kd0 = eval(|g| {
        let (a, b) = (leaf(g, &s), leaf(g, &t));
        kd_loss(g, a, b, &y, 0.0, 4.0)
    });
    assert!((kd0 - ce).abs() < 1e-12);
    let self_kd = eval(|g| {
        let (a, b) = (leaf(g, &s), leaf(g, &s));
        kd_loss(g, a, b, &y, 1.0, 4.0)
    });
    assert!(self_kd.abs() < 1e-12);
    let trades_same = eval(|g| {
        let (a, b) = (leaf(g, &s), leaf(g, &s));
        trades_loss(g, a, b, &y, 6.0)
    });
    assert!((trades_same - ce).abs() < 1e-12);
    let rslad_same = eval(|g| {
        let (a, b, c) = (leaf(g, &s), leaf(g, &s), leaf(g, &s));
        rslad_loss(g, a, b, c, 0.8)
    });
    assert!(rslad_same.abs() < 1e-12);
}

#[test]
fn cross_entropy_closed_form() {
    let v = eval(|g| {
        let l = g.constant(&[1, 2], vec![2.0, 0.0])?;
        cross_entropy(g, l, &[0])
    });
    assert!((v - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-14);
}

#[test]
fn every_loss_is_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let w = VicregWeights::default();
    for _ in 0..1000 {
        let n = rng.random_range(2..6);
        let c = rng.random_range(2..6);
        let d = rng.random_range(1..8);
        let y = labels(&mut rng, n, c);
        let a = matrix(&mut rng, n, c, 5.0);
        let b = matrix(&mut rng, n, c, 5.0);
        let t = matrix(&mut rng, n, c, 5.0);
        let z = matrix(&mut rng, n, d, 2.0);
        let zp = matrix(&mut rng, n, d, 2.0);
        let values = [
            eval(|g| {
                let x = leaf(g, &a);
                cross_entropy(g, x, &y)
            }),
            eval(|g| {
                let (x, q) = (leaf(g, &a), leaf(g, &b));
                kl_div(g, x, q, 2.0)
            }),
            eval(|g| {
                let (x, q) = (leaf(g, &a), leaf(g, &t));
                kd_loss(g, x, q, &y, 0.5, 4.0)
            }),
            eval(|g| {
                let (x, q) = (leaf(g, &b), leaf(g, &t));
                ard_loss(g, x, q, &y, 0.5, 1.0)
            }),
            eval(|g| {
                let (x, q, r) = (leaf(g, &a), leaf(g, &b), leaf(g, &t));
                rslad_loss(g, x, q, r, 5.0 / 6.0)
            }),
            eval(|g| {
                let (x, q) = (leaf(g, &a), leaf(g, &b));
                trades_loss(g, x, q, &y, 6.0)
            }),
            eval(|g| {
                let (x, q, p, r) = (leaf(g, &a), leaf(g, &b), leaf(g, &z), leaf(g, &zp));
                vic_kd_loss(g, x, q, p, r, &y, 0.5, 6.0, &w).map(|t| t.total)
            }),
        ];
        for v in values {
            // KL of identical rows can round to a hair below zero.
            assert!(v >= -1e-12, "{v}");
        }
    }
}

#[test]
fn teacher_receives_no_gradient_from_vic_kd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let len = 400;
    let mut teacher: Teacher<f64> = Teacher::new(TeacherConfig::for_input(4000, len, 5), &mut rng).unwrap();
    teacher.set_trainable(false);
    let cfg = StudentConfig::preset(StudentPreset::TcresnetMini, 4000, len, 5).with_projection(teacher.config().dim);
    let student: Student<f64> = Student::new(cfg, &mut rng).unwrap();
    let x: Vec<f64> = (0..3 * len).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut g = Graph::new();
    let xs = g.constant(&[3, len], x.clone()).unwrap();
    let xa = g.constant(&[3, len], x.iter().map(|v| v + 1e-3).collect()).unwrap();
    let clean = student.forward(&mut g, xs, Mode::Train).unwrap();
    let adv = student.forward(&mut g, xa, Mode::Train).unwrap();
    let t = teacher.forward(&mut g, xs).unwrap();
    let terms = vic_kd_loss(
        &mut g,
        clean.logits,
        adv.logits,
        t.representation,
        adv.projection.unwrap(),
        &[0, 1, 2],
        0.5,
        6.0,
        &VicregWeights::default(),
    )
    .unwrap();
    let grads = g.backward(terms.total).unwrap();
    let teacher_nodes = g.bind(teacher.params());
    for id in teacher_nodes {
        if let Some(gr) = grads.get(id) {
            assert!(gr.iter().all(|&v| v == 0.0));
        }
    }
    let student_nodes = g.bind(student.params());
    let touched = student_nodes
        .iter()
        .filter(|&&id| grads.get(id).is_some_and(|gr| gr.iter().any(|&v| v != 0.0)))
        .count();
    assert!(touched > student_nodes.len() / 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_zero_iff_equal_and_otherwise_positive(rows in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 3), 1..5)) {
        let same = eval(|g| {
            let (a, b) = (leaf(g, &rows), leaf(g, &rows));
            kl_div(g, a, b, 1.0)
        });
        prop_assert!(same.abs() < 1e-12);
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] + 1.0, r[1], r[2]]).collect();
        let v = eval(|g| {
            let (a, b) = (leaf(g, &rows), leaf(g, &shifted));
            kl_div(g, a, b, 1.0)
        });
        prop_assert!(v > 0.0);
    }

    #[test]
    fn invariance_is_permutation_covariant(seed in 0u64..1000, n in 1usize..8, d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = matrix(&mut rng, n, d, 2.0);
        let zp = matrix(&mut rng, n, d, 2.0);
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        let pz: Vec<Vec<f64>> = order.iter().map(|&i| z[i].clone()).collect();
        let pzp: Vec<Vec<f64>> = order.iter().map(|&i| zp[i].clone()).collect();
        prop_assert!((inv_oracle(&z, &zp) - inv_oracle(&pz, &pzp)).abs() < 1e-12);
        let graph = eval(|g| {
            let (a, b) = (leaf(g, &pz), leaf(g, &pzp));
            vicreg_invariance(g, a, b)
        });
        prop_assert!((graph - inv_oracle(&z, &zp)).abs() < 1e-10);
    }

    #[test]
    fn alpha_outside_unit_interval_is_rejected(alpha in prop_oneof![-5.0f64..-1e-9, 1.0f64 + 1e-9..5.0]) {
        let mut g: Graph<f64> = Graph::new();
        let l = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
        let z = g.constant(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = vic_kd_loss(&mut g, l, l, z, z, &[0, 1], alpha, 6.0, &VicregWeights::default());
        prop_assert!(matches!(r, Err(vickd::Error::Config(_))));
    }
}
