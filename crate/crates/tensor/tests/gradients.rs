use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vickd_tensor::check::{max_relative_error, op_cases, uniform};

const TRIALS: usize = 100;
const TOL: f64 = 1e-4;

#[test]
fn every_op_matches_central_differences() {
    for case in op_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let mut worst = 0.0f64;
        for _ in 0..TRIALS {
            let err = (case.trial)(&mut rng).unwrap_or_else(|e| panic!("{}: {e}", case.name));
            worst = worst.max(err);
        }
        assert!(worst < TOL, "{}: worst relative error {worst:e}", case.name);
    }
}

#[test]
fn composite_softmax_cross_entropy_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let x = uniform(&mut rng, &[3, 4], -1.0, 1.0);
        let w = uniform(&mut rng, &[4, 5], -1.0, 1.0);
        let err = max_relative_error(&[x, w], |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.square(h)?;
            let ls = g.log_softmax(h)?;
            let m = g.mean(ls, 1)?;
            g.mean_all(m)
        })
        .unwrap();
        assert!(err < TOL, "{err:e}");
    }
}
