//! Test-set evaluation and Hessian alignment of parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::ndcore::{
    dot, norm2, power_iteration, power_iteration_from, Matrix, PowerIterOptions, Rng, Vector,
};
use crate::synthdata::{argmax, Dataset};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean loss and argmax accuracy of the model on a labeled set.
pub fn evaluate(model: &Model, theta: &[f64], data: &Dataset) -> Result<Evaluation> {
    let y = data.labels()?;
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let pass = model.forward(theta, &data.x)?;
    let loss = pass.loss(model.loss_kind(), y);
    Ok(Evaluation {
        loss,
        accuracy: accuracy(pass.logits(), y),
    })
}

/// Fraction of rows whose prediction argmax equals the label argmax, ties
/// going to the lowest index on both sides.
pub fn accuracy(pred: &Matrix, labels: &Matrix) -> f64 {
    if pred.rows() == 0 {
        return 0.0;
    }
    let hits = (0..pred.rows())
        .filter(|&i| argmax(pred.row(i)) == argmax(labels.row(i)))
        .count();
    hits as f64 / pred.rows() as f64
}

/// `|qᵀu| / (‖q‖ ‖u‖)`.
pub fn alignment_with(q: &[f64], update: &[f64]) -> Result<f64> {
    crate::ndcore::ensure_same_len("alignment", q.len(), update.len())?;
    let nu = norm2(update);
    if nu == 0.0 {
        return Err(Error::InvalidDimension("alignment of a zero update".into()));
    }
    let nq = norm2(q);
    if nq == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(q, update).abs() / (nq * nu)).min(1.0))
}

/// Which parameter update the alignment diagnostic measures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    /// The applied change `θ_new − θ_old`.
    #[default]
    Displacement,
    /// The raw gradient fed to the optimizer.
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub iters: usize,
    pub tol: f64,
    /// Use only the first this-many test rows for the Hessian.
    pub max_samples: Option<usize>,
    /// Start each power iteration from the previous eigenvector.
    pub warm_start: bool,
    pub seed: u64,
    pub update: UpdateKind,
    /// Measure at iterations divisible by this; `None` measures at every
    /// recorded iteration.
    pub every: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            iters: 100,
            tol: 1e-6,
            max_samples: None,
            warm_start: false,
            seed: 0,
            update: UpdateKind::Displacement,
            every: None,
        }
    }
}

/// Principal Hessian eigenvector of the test loss, cached per parameter point.
#[derive(Clone, Debug)]
pub struct AlignmentProbe {
    config: ProbeConfig,
    x: Matrix,
    y: Matrix,
    rng: Rng,
    cache: Option<(Vec<f64>, Vector)>,
    last_eigenvalue: f64,
}

impl AlignmentProbe {
    pub fn new(test: &Dataset, config: ProbeConfig) -> Result<AlignmentProbe> {
        let y = test.labels()?;
        let n = config.max_samples.map_or(test.len(), |m| m.min(test.len()));
        if n == 0 {
            return Err(Error::Empty("alignment probe set"));
        }
        if config.iters == 0 {
            return Err(Error::InvalidConfig(
                "probe needs at least one iteration".into(),
            ));
        }
        let rows: Vec<usize> = (0..n).collect();
        Ok(AlignmentProbe {
            config,
            x: test.x.select_rows(&rows),
            y: y.select_rows(&rows),
            rng: Rng::new(config.seed).substream("alignment-probe"),
            cache: None,
            last_eigenvalue: f64::NAN,
        })
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.config
    }

    pub fn due(&self, iteration: usize) -> bool {
        self.config
            .every
            .is_none_or(|e| e > 0 && iteration.is_multiple_of(e))
    }

    /// Eigenvalue that went with the most recent eigenvector.
    pub fn last_eigenvalue(&self) -> f64 {
        self.last_eigenvalue
    }

    /// Unit principal eigenvector at `theta`, recomputed when `theta` differs
    /// from the cached stamp.
    pub fn principal_direction(&mut self, model: &Model, theta: &[f64]) -> Result<&Vector> {
        let stale = !matches!(&self.cache, Some((stamp, _)) if stamp.as_slice() == theta);
        if stale {
            let opts = PowerIterOptions {
                iters: self.config.iters,
                tol: self.config.tol,
            };
            let (x, y) = (&self.x, &self.y);
            let apply = |v: &[f64]| model.hvp(theta, x, y, v);
            let pair = match (&self.cache, self.config.warm_start) {
                (Some((_, q)), true) => power_iteration_from(apply, q, opts)?,
                _ => power_iteration(apply, theta.len(), opts, &mut self.rng)?,
            };
            self.last_eigenvalue = pair.value;
            self.cache = Some((theta.to_vec(), pair.vector));
        }
        Ok(&self.cache.as_ref().expect("cache filled above").1)
    }

    pub fn alignment(&mut self, model: &Model, theta: &[f64], update: &[f64]) -> Result<f64> {
        if norm2(update) == 0.0 {
            return Err(Error::InvalidDimension("alignment of a zero update".into()));
        }
        let q = self.principal_direction(model, theta)?;
        alignment_with(q, update)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LossKind, MlpConfig};
    use crate::ndcore::symmetric_eigen;
    use crate::synthdata::{one_hot, Split};

    fn labeled(x: Matrix, y: Matrix) -> Dataset {
        Dataset::labeled(x, y, Split::Test).unwrap()
    }

    #[test]
    fn perfect_one_hot_predictions() {
        let model = Model::mlp(
            &MlpConfig::four_layer(2, 3, 3),
            LossKind::SoftmaxCrossEntropy,
        )
        .unwrap();
        // Zero weights, output bias pushes class 1 to a saturated logit.
        let mut theta = vec![0.0; model.num_params()];
        let n = theta.len();
        theta[n - 2] = 1e3;
        let data = labeled(Matrix::zeros(4, 2), one_hot(&[1, 1, 1, 1], 3));
        let ev = evaluate(&model, &theta, &data).unwrap();
        assert_eq!(ev.accuracy, 1.0);
        assert_eq!(ev.loss, 0.0);
    }

    #[test]
    fn uniform_predictions_give_log_k() {
        let model = Model::mlp(
            &MlpConfig::four_layer(3, 4, 5),
            LossKind::SoftmaxCrossEntropy,
        )
        .unwrap();
        let theta = vec![0.0; model.num_params()];
        let mut rng = Rng::new(1);
        let x = Matrix::from_vec(6, 3, (0..18).map(|_| rng.normal()).collect()).unwrap();
        let data = labeled(x, one_hot(&[0, 1, 2, 3, 4, 2], 5));
        let ev = evaluate(&model, &theta, &data).unwrap();
        assert!((ev.loss - 5f64.ln()).abs() < 1e-12);
        // All logits tie, so every prediction is class 0.
        assert!((ev.accuracy - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn evaluation_matches_per_sample_loop() {
        let model = Model::mlp(
            &MlpConfig::four_layer(3, 5, 4),
            LossKind::SoftmaxCrossEntropy,
        )
        .unwrap();
        let mut rng = Rng::new(8);
        let theta = model.init_params(&mut rng);
        let n = 9;
        let x = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.normal()).collect()).unwrap();
        let classes: Vec<usize> = (0..n).map(|_| rng.index(4)).collect();
        let data = labeled(x.clone(), one_hot(&classes, 4));
        let ev = evaluate(&model, &theta, &data).unwrap();

        let mut loss = 0.0;
        let mut hits = 0;
        for (i, &c) in classes.iter().enumerate() {
            let xi = Matrix::from_vec(1, 3, x.row(i).to_vec()).unwrap();
            let z = model.logits(&theta, &xi).unwrap();
            let z = z.row(0);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss -= z[c] - lse;
            let mut best = 0;
            for j in 1..z.len() {
                if z[j] > z[best] {
                    best = j;
                }
            }
            hits += usize::from(best == c);
        }
        assert!((ev.loss - loss / n as f64).abs() < 1e-12);
        assert_eq!(ev.accuracy, hits as f64 / n as f64);
    }

    #[test]
    fn unlabeled_set_is_rejected() {
        let model = Model::linear(2).unwrap();
        let data = Dataset::unlabeled(Matrix::zeros(3, 2));
        assert_eq!(evaluate(&model, &[0.0, 0.0], &data), Err(Error::Unlabeled));
    }

    #[test]
    fn alignment_trivial_cases() {
        let q = [0.6, 0.8, 0.0];
        assert!((alignment_with(&q, &q).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(alignment_with(&q, &[0.8, -0.6, 3.0]).unwrap(), 0.0);
        assert!(alignment_with(&q, &[0.0; 3]).is_err());
        let u = [1.0, -2.0, 0.5];
        let a = alignment_with(&q, &u).unwrap();
        assert_eq!(a, alignment_with(&q, &[-1.0, 2.0, -0.5]).unwrap());
        assert!((a - alignment_with(&q, &[3.0, -6.0, 1.5]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn linear_alignment_matches_dense_eigensolver() {
        let d = 6;
        let n = 40;
        let mut rng = Rng::new(77);
        // Columns scaled so the top eigenvalue is well separated.
        let scales = [3.0, 1.0, 0.8, 0.6, 0.4, 0.2];
        let x = Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|i| scales[i % d] * rng.normal()).collect(),
        )
        .unwrap();
        let y = Matrix::from_vec(n, 1, (0..n).map(|_| rng.normal()).collect()).unwrap();
        let data = labeled(x.clone(), y);
        let model = Model::linear(d).unwrap();
        let theta: Vec<f64> = (0..d).map(|_| rng.normal()).collect();

        let eig = symmetric_eigen(&x.gram(n as f64)).unwrap();
        let q_dense = eig.vectors.col(0);

        let mut probe = AlignmentProbe::new(&data, ProbeConfig::default()).unwrap();
        for _ in 0..5 {
            let u: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let got = probe.alignment(&model, &theta, &u).unwrap();
            let want = alignment_with(&q_dense, &u).unwrap();
            assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
        }
        assert!((probe.last_eigenvalue() - eig.values[0]).abs() < 1e-9);
    }

    #[test]
    fn cache_is_reused_for_identical_parameters() {
        let mut rng = Rng::new(4);
        let x = Matrix::from_vec(10, 3, (0..30).map(|_| rng.normal()).collect()).unwrap();
        let data = labeled(x, Matrix::zeros(10, 1));
        let model = Model::linear(3).unwrap();
        let mut probe = AlignmentProbe::new(&data, ProbeConfig::default()).unwrap();
        let q1 = probe
            .principal_direction(&model, &[0.0; 3])
            .unwrap()
            .clone();
        let q2 = probe
            .principal_direction(&model, &[0.0; 3])
            .unwrap()
            .clone();
        assert_eq!(q1, q2);
        assert!((norm2(&q1) - 1.0).abs() < 1e-12);
    }
}
