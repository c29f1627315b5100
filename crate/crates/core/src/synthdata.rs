//! Dataset containers and the concentric-rings generator.
//!
//! Each rings point is a uniform direction on the unit sphere scaled by a
//! radius whose band depends on the class: the innermost class lives in
//! `[0.75, 1)`, the outermost in `[K-1, K-0.75)`, and every middle class `c`
//! in `[c-1, c-0.75) ∪ [c-0.25, c)`. Adjacent classes therefore touch, so
//! the optimal decision boundaries run through dense regions.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{sample_unit_sphere, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
}

/// Inputs with optional labels.
///
/// Unlabeled sets may carry the true labels in a hidden slot; training code
/// never reads it, diagnostics may.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub split: Split,
    y: Option<Matrix>,
    hidden_y: Option<Matrix>,
}

impl Dataset {
    pub fn labeled(x: Matrix, y: Matrix, split: Split) -> Result<Dataset> {
        if y.rows() != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "Dataset::labeled",
                expected: format!("{} label rows", x.rows()),
                found: format!("{}", y.rows()),
            });
        }
        Ok(Dataset {
            x,
            split,
            y: Some(y),
            hidden_y: None,
        })
    }

    pub fn unlabeled(x: Matrix) -> Dataset {
        Dataset {
            x,
            split: Split::Unlabeled,
            y: None,
            hidden_y: None,
        }
    }

    /// Drop the visible labels, keeping them for diagnostics only.
    pub fn strip_labels(mut self) -> Dataset {
        self.hidden_y = self.y.take().or(self.hidden_y);
        self.split = Split::Unlabeled;
        self
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn labels(&self) -> Result<&Matrix> {
        self.y.as_ref().ok_or(Error::Unlabeled)
    }

    pub fn hidden_labels(&self) -> Option<&Matrix> {
        self.hidden_y.as_ref()
    }

    /// Class index (0-based, ties to the lowest index) of each row, from the
    /// visible labels or, failing that, the hidden ones.
    pub fn class_indices(&self) -> Result<Vec<usize>> {
        let y = self
            .y
            .as_ref()
            .or(self.hidden_y.as_ref())
            .ok_or(Error::Unlabeled)?;
        Ok((0..y.rows()).map(|i| argmax(y.row(i))).collect())
    }

    /// Plain-text dump: a header line `d,n,k`, then one line per row with the
    /// `d` inputs followed by the 1-based class (empty when the set has no
    /// labels at all).
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let classes = self.class_indices().ok();
        let k = self
            .y
            .as_ref()
            .or(self.hidden_y.as_ref())
            .map_or(0, Matrix::cols);
        writeln!(out, "{},{},{}", self.dim(), self.len(), k)?;
        for i in 0..self.len() {
            let mut line = self
                .x
                .row(i)
                .iter()
                .map(|v| format_real(*v))
                .collect::<Vec<_>>()
                .join(",");
            line.push(',');
            if let Some(c) = &classes {
                line.push_str(&(c[i] + 1).to_string());
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Decimal rendering with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

pub fn one_hot(classes: &[usize], k: usize) -> Matrix {
    let mut y = Matrix::zeros(classes.len(), k);
    for (i, &c) in classes.iter().enumerate() {
        y.set(i, c, 1.0);
    }
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingsConfig {
    pub dim: usize,
    pub n_labeled: usize,
    pub unlabeled_multiplier: usize,
    pub n_test: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for RingsConfig {
    fn default() -> Self {
        RingsConfig {
            dim: 50,
            n_labeled: 5000,
            unlabeled_multiplier: 5,
            n_test: 10_000,
            num_classes: 5,
            seed: 0,
        }
    }
}

impl RingsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0
            || self.n_labeled == 0
            || self.unlabeled_multiplier == 0
            || self.n_test == 0
        {
            return Err(Error::InvalidConfig(format!(
                "rings dimension and counts must be at least 1: {self:?}"
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "rings need at least two classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n_labeled * self.unlabeled_multiplier
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RingsData {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
}

/// Radius for a point of 0-based class `class` out of `num_classes`.
pub fn sample_radius(rng: &mut Rng, class: usize, num_classes: usize) -> f64 {
    let base = class as f64;
    let offset = if class == 0 {
        rng.uniform_range(0.75, 1.0)
    } else if class + 1 == num_classes {
        rng.uniform_range(0.0, 0.25)
    } else {
        // Uniform over [0, 0.25) ∪ [0.75, 1): total length 1/2.
        let u = rng.uniform_range(0.0, 0.5);
        if u < 0.25 {
            u
        } else {
            u + 0.5
        }
    };
    base + offset
}

/// Points and 0-based classes.
pub fn sample_rings(
    rng: &mut Rng,
    n: usize,
    dim: usize,
    num_classes: usize,
) -> Result<(Matrix, Vec<usize>)> {
    let mut x = Matrix::zeros(n, dim);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let v = sample_unit_sphere(rng, dim)?;
        let c = rng.index(num_classes);
        let s = sample_radius(rng, c, num_classes);
        for (dst, vj) in x.row_mut(i).iter_mut().zip(v.iter()) {
            *dst = vj * s;
        }
        classes.push(c);
    }
    Ok((x, classes))
}

pub fn gen_rings(cfg: &RingsConfig) -> Result<RingsData> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let make = |label: &str, n: usize, split: Split| -> Result<Dataset> {
        let mut rng = root.substream(label);
        let (x, classes) = sample_rings(&mut rng, n, cfg.dim, cfg.num_classes)?;
        Dataset::labeled(x, one_hot(&classes, cfg.num_classes), split)
    };
    Ok(RingsData {
        labeled: make("rings-labeled", cfg.n_labeled, Split::Labeled)?,
        unlabeled: make("rings-unlabeled", cfg.n_unlabeled(), Split::Unlabeled)?.strip_labels(),
        test: make("rings-test", cfg.n_test, Split::Test)?,
    })
}

/// Number of rows per class.
pub fn split_counts(ds: &Dataset) -> Result<Vec<usize>> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let k =
        ds.y.as_ref()
            .or(ds.hidden_y.as_ref())
            .map_or(0, Matrix::cols);
    let mut counts = vec![0; k];
    for c in ds.class_indices()? {
        counts[c] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radius_band_contains(class: usize, k: usize, s: f64) -> bool {
        let o = s - class as f64;
        if class == 0 {
            (0.75..1.0).contains(&o)
        } else if class + 1 == k {
            (0.0..0.25).contains(&o)
        } else {
            (0.0..0.25).contains(&o) || (0.75..1.0).contains(&o)
        }
    }

    #[test]
    fn radius_bands_follow_class() {
        let mut rng = Rng::new(12);
        for _ in 0..2000 {
            let s = sample_radius(&mut rng, 4, 5);
            assert!((4.0..=4.25).contains(&s));
            let s = sample_radius(&mut rng, 0, 5);
            assert!((0.75..=1.0).contains(&s));
        }
    }

    #[test]
    fn middle_class_splits_evenly_between_sub_bands() {
        // Each half of the union has equal length, so each receives a
        // Binomial(n, 1/2) share; 3 sigma = 150 for n = 10^4.
        let mut rng = Rng::new(99);
        let n = 10_000;
        let mut low = 0usize;
        for _ in 0..n {
            let s = sample_radius(&mut rng, 2, 5);
            assert!((2.0..2.25).contains(&s) || (2.75..3.0).contains(&s));
            if s < 2.5 {
                low += 1;
            }
        }
        let sigma = (n as f64 * 0.25).sqrt();
        assert!(
            (low as f64 - n as f64 / 2.0).abs() <= 3.0 * sigma,
            "low = {low}"
        );
    }

    #[test]
    fn generated_points_lie_in_their_class_band() {
        let cfg = RingsConfig {
            dim: 7,
            n_labeled: 300,
            unlabeled_multiplier: 2,
            n_test: 200,
            num_classes: 5,
            seed: 5,
        };
        let data = gen_rings(&cfg).unwrap();
        for ds in [&data.labeled, &data.unlabeled, &data.test] {
            let classes = ds.class_indices().unwrap();
            for (i, c) in classes.iter().enumerate() {
                let s = crate::ndcore::norm2(ds.x.row(i));
                assert!(radius_band_contains(*c, 5, s) || (s - (*c as f64 + 1.0)).abs() < 1e-12);
            }
        }
        assert_eq!(data.unlabeled.len(), 600);
        assert!(data.unlabeled.labels().is_err());
        assert!(data.unlabeled.hidden_labels().is_some());
        assert_eq!(data.test.len(), 200);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = RingsConfig {
            dim: 3,
            n_labeled: 20,
            unlabeled_multiplier: 1,
            n_test: 10,
            num_classes: 5,
            seed: 42,
        };
        assert_eq!(gen_rings(&cfg).unwrap(), gen_rings(&cfg).unwrap());
        let other = RingsConfig { seed: 43, ..cfg };
        assert_ne!(
            gen_rings(&cfg).unwrap().labeled,
            gen_rings(&other).unwrap().labeled
        );
    }

    #[test]
    fn class_counts_are_multinomial() {
        let mut rng = Rng::new(3);
        let (_, classes) = sample_rings(&mut rng, 5000, 2, 5).unwrap();
        let ds =
            Dataset::labeled(Matrix::zeros(5000, 1), one_hot(&classes, 5), Split::Test).unwrap();
        let counts = split_counts(&ds).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 5000);
        let sigma = (5000.0f64 * 0.2 * 0.8).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn split_counts_edge_cases() {
        let one = Dataset::labeled(Matrix::zeros(1, 2), one_hot(&[3], 5), Split::Test).unwrap();
        assert_eq!(split_counts(&one).unwrap(), vec![0, 0, 0, 1, 0]);
        let empty =
            Dataset::labeled(Matrix::zeros(0, 2), Matrix::zeros(0, 5), Split::Test).unwrap();
        assert_eq!(split_counts(&empty), Err(Error::Empty("dataset")));
        assert_eq!(
            split_counts(&Dataset::unlabeled(Matrix::zeros(2, 2))),
            Err(Error::Unlabeled)
        );
    }

    #[test]
    fn radial_distribution_is_uniform_within_bands() {
        // Kolmogorov-Smirnov against U(0,1) after mapping each band onto
        // [0,1); the asymptotic 1% critical value is 1.628 / sqrt(n).
        let mut rng = Rng::new(2718);
        let n = 10_000;
        for class in 0..5 {
            let mut u: Vec<f64> = (0..n)
                .map(|_| {
                    let o = sample_radius(&mut rng, class, 5) - class as f64;
                    if class == 0 {
                        (o - 0.75) / 0.25
                    } else if class == 4 {
                        o / 0.25
                    } else if o < 0.5 {
                        o / 0.5
                    } else {
                        (o - 0.5) / 0.5
                    }
                })
                .collect();
            u.sort_by(f64::total_cmp);
            let d = u
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let lo = i as f64 / n as f64;
                    let hi = (i + 1) as f64 / n as f64;
                    (v - lo).abs().max((hi - v).abs())
                })
                .fold(0.0, f64::max);
            assert!(d <= 1.628 / (n as f64).sqrt(), "class {class}: D = {d}");
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let ds = Dataset::labeled(
            Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -0.25]]).unwrap(),
            one_hot(&[1, 0], 3),
            Split::Test,
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "2,2,3");
        assert_eq!(lines[1], "1.0000000000000000e0,2.0000000000000000e0,2");
        assert_eq!(lines.len(), 3);
    }
}
