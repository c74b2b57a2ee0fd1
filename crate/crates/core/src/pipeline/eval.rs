//! Clean and robust evaluation of a trained classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::EvalConfig;
use crate::attacks::{self, AttackFamily, EnsembleResult};
use crate::data::{derive_seed, stable_hash, Dataset};
use crate::error::{Error, Result};
use crate::models::Classifier;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Accuracy on the whole test split, percent.
    pub clean_acc: f64,
    /// Attack results on the evaluated subset.
    pub ensemble: EnsembleResult,
    pub families: Vec<AttackFamily>,
}

impl Evaluation {
    /// Robust accuracy under the first attack of `family`, percent.
    pub fn robust(&self, family: AttackFamily) -> Option<f64> {
        self.families
            .iter()
            .position(|&f| f == family)
            .map(|a| self.ensemble.attack_accuracy(a))
    }

    pub fn ensemble_acc(&self) -> f64 {
        self.ensemble.robust_accuracy()
    }

    pub fn evaluated(&self) -> usize {
        self.ensemble.clean_correct.len()
    }
}

/// Test items used for robust evaluation: all of them, or the first
/// `limit` in id-hash order so that the subset does not follow class order.
pub fn robust_subset(test: &Dataset, limit: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..test.len()).collect();
    if let Some(n) = limit.filter(|&n| n < test.len()) {
        idx.sort_by_key(|&i| (stable_hash(&[test.items[i].id.as_bytes()]), i));
        idx.truncate(n);
        idx.sort_unstable();
    }
    idx
}

/// Clean accuracy on the full split plus the attack ensemble on the robust
/// subset. Attack randomness derives from `seed` alone.
pub fn evaluate<M: Classifier<f32> + ?Sized>(
    model: &M,
    test: &Dataset,
    eval: &EvalConfig,
    seed: u64,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Data("empty test split".into()));
    }
    if model.num_classes() != test.num_classes() {
        return Err(Error::Model(format!(
            "model predicts {} classes, test split has {}",
            model.num_classes(),
            test.num_classes()
        )));
    }
    let len = test.length;
    let (x, y) = test.all();
    let mut right = 0;
    for (xc, yc) in x.chunks(eval.batch_size.max(1) * len).zip(y.chunks(eval.batch_size.max(1))) {
        let pred = attacks::predict(model, xc, len)?;
        right += pred.iter().zip(yc).filter(|(p, t)| p == t).count();
    }
    let clean_acc = 100.0 * right as f64 / y.len() as f64;
    let (xs, ys) = test.gather(&robust_subset(test, eval.limit));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "eval"));
    let ensemble = attacks::ensemble_eval(model, &xs, &ys, len, &eval.attacks, eval.batch_size, &mut rng)?;
    Ok(Evaluation {
        clean_acc,
        ensemble,
        families: eval.attacks.iter().map(|a| a.family).collect(),
    })
}
