//! One module per experiment; each writes its tables and a `report.json`.

pub mod gradcheck;
pub mod learnspeed;
pub mod linreg_oracle;
pub mod propcheck;
pub mod rings;

use lga_core::linreg_lab::DiagonalProblem;
use lga_core::ndcore::Rng;

/// Random well-conditioned problem: eigenvalues in `[0.2, 2]` and targets of
/// magnitude in `[0.5, 2]` with random sign. Row counts are raised to `m`.
pub fn random_problem(rng: &mut Rng, m: usize, n_l: usize, n_u: usize) -> DiagonalProblem {
    let eig = |rng: &mut Rng| {
        (0..m)
            .map(|_| rng.uniform_range(0.2, 2.0))
            .collect::<Vec<_>>()
    };
    let lambda_l = eig(rng);
    let lambda_u = eig(rng);
    let b = (0..m)
        .map(|_| {
            let v = rng.uniform_range(0.5, 2.0);
            if rng.uniform() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect();
    DiagonalProblem {
        lambda_l,
        lambda_u,
        b,
        n_l: n_l.max(m),
        n_u: n_u.max(m),
    }
}
