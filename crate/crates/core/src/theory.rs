//! Probabilistic analysis of consistency-based detection.
//!
//! With p = P(references consistent | clean) and q = P(consistent |
//! adversarial), and equal priors on the two input populations, Bayes gives
//!
//! ```text
//! P(adversarial | consistent)   = q / (p + q)
//! P(adversarial | inconsistent) = (1 - q) / (2 - (p + q))
//! ```
//!
//! A detector is useful when the first posterior is small and the second is
//! large. `monte_carlo_posterior` is an independent simulation oracle for the
//! closed forms (with the prior exposed, so the equal-prior assumption is
//! testable), and `sweep_grid` tabulates both posteriors over the (p, q)
//! unit square.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::Verdict;
use crate::error::{Error, Result};

/// Empirical consistency rates on clean and adversarial inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PQEstimate {
    /// Fraction of clean inputs with consistent reference predictions.
    pub p: f64,
    /// Fraction of adversarial inputs with consistent reference predictions.
    pub q: f64,
    pub n_clean: usize,
    pub n_adv: usize,
}

/// P(adversarial | references consistent) = q / (p + q).
pub fn posterior_given_consistent(p: f64, q: f64) -> Result<f64> {
    check_unit("p", p)?;
    check_unit("q", q)?;
    if p + q == 0.0 {
        return Err(Error::UndefinedPosterior(
            "p + q == 0: consistency never occurs".into(),
        ));
    }
    Ok(q / (p + q))
}

/// P(adversarial | references inconsistent) = (1 - q) / (2 - (p + q)).
pub fn posterior_given_inconsistent(p: f64, q: f64) -> Result<f64> {
    check_unit("p", p)?;
    check_unit("q", q)?;
    if p + q == 2.0 {
        return Err(Error::UndefinedPosterior(
            "p + q == 2: inconsistency never occurs".into(),
        ));
    }
    Ok((1.0 - q) / (2.0 - (p + q)))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Estimate p and q from observed verdicts.
pub fn estimate_pq(verdicts_clean: &[Verdict], verdicts_adv: &[Verdict]) -> Result<PQEstimate> {
    if verdicts_clean.is_empty() || verdicts_adv.is_empty() {
        return Err(Error::invalid("estimate_pq needs non-empty verdict lists"));
    }
    let consistent = |vs: &[Verdict]| vs.iter().filter(|v| v.consistent).count() as f64;
    Ok(PQEstimate {
        p: consistent(verdicts_clean) / verdicts_clean.len() as f64,
        q: consistent(verdicts_adv) / verdicts_adv.len() as f64,
        n_clean: verdicts_clean.len(),
        n_adv: verdicts_adv.len(),
    })
}

/// Simulation oracle for the posteriors: draw `trials` inputs that are
/// adversarial with probability `prior_adv`, consistent with probability q
/// (adversarial) or p (clean), and report the empirical conditionals.
/// A conditional with no samples is reported as `None`.
pub fn monte_carlo_posterior(
    p: f64,
    q: f64,
    prior_adv: f64,
    trials: usize,
    seed: u64,
) -> Result<(Option<f64>, Option<f64>)> {
    check_unit("p", p)?;
    check_unit("q", q)?;
    check_unit("prior_adv", prior_adv)?;
    if trials < 1 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut consistent_total = 0u64;
    let mut consistent_adv = 0u64;
    let mut inconsistent_total = 0u64;
    let mut inconsistent_adv = 0u64;
    for _ in 0..trials {
        let adv = rng.random_bool(prior_adv);
        let consistent = rng.random_bool(if adv { q } else { p });
        if consistent {
            consistent_total += 1;
            consistent_adv += adv as u64;
        } else {
            inconsistent_total += 1;
            inconsistent_adv += adv as u64;
        }
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    Ok((
        ratio(consistent_adv, consistent_total),
        ratio(inconsistent_adv, inconsistent_total),
    ))
}

/// Both posteriors tabulated over a (p, q) grid; `None` marks the undefined
/// corners (p = q = 0 for the consistent posterior, p = q = 1 for the
/// inconsistent one).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    pub p_values: Vec<f64>,
    pub q_values: Vec<f64>,
    /// Indexed [p][q].
    pub p_adv_given_consistent: Vec<Vec<Option<f64>>>,
    /// Indexed [p][q].
    pub p_adv_given_inconsistent: Vec<Vec<Option<f64>>>,
}

impl PosteriorGrid {
    /// One `p<TAB>q<TAB>PEC<TAB>PED` line per cell; undefined cells print NA.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("p\tq\tp_adv_given_consistent\tp_adv_given_inconsistent\n");
        for (i, &p) in self.p_values.iter().enumerate() {
            for (j, &q) in self.q_values.iter().enumerate() {
                let fmt = |c: Option<f64>| match c {
                    Some(v) => format!("{v:.6}"),
                    None => "NA".to_string(),
                };
                out.push_str(&format!(
                    "{p:.4}\t{q:.4}\t{}\t{}\n",
                    fmt(self.p_adv_given_consistent[i][j]),
                    fmt(self.p_adv_given_inconsistent[i][j]),
                ));
            }
        }
        out
    }
}

/// Evaluate both posteriors over the grid [0,1] x [0,1] at the given steps.
pub fn sweep_grid(p_step: f64, q_step: f64) -> Result<PosteriorGrid> {
    let axis = |step: f64, name: &str| -> Result<Vec<f64>> {
        if !(step > 0.0 && step <= 0.5) {
            return Err(Error::invalid(format!("{name} = {step} outside (0, 0.5]")));
        }
        let n = (1.0 / step).round() as usize;
        Ok((0..=n).map(|i| (i as f64 * step).min(1.0)).collect())
    };
    let p_values = axis(p_step, "p_step")?;
    let q_values = axis(q_step, "q_step")?;
    let mut pec = Vec::with_capacity(p_values.len());
    let mut ped = Vec::with_capacity(p_values.len());
    for &p in &p_values {
        let mut row_c = Vec::with_capacity(q_values.len());
        let mut row_d = Vec::with_capacity(q_values.len());
        for &q in &q_values {
            row_c.push(posterior_given_consistent(p, q).ok());
            row_d.push(posterior_given_inconsistent(p, q).ok());
        }
        pec.push(row_c);
        ped.push(row_d);
    }
    Ok(PosteriorGrid {
        p_values,
        q_values,
        p_adv_given_consistent: pec,
        p_adv_given_inconsistent: ped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn verdict(consistent: bool) -> Verdict {
        Verdict {
            flagged: !consistent,
            victim_label: 0,
            reference_labels: if consistent { vec![0, 0] } else { vec![0, 1] },
            consistent,
        }
    }

    #[test]
    fn posterior_values_match_closed_form() {
        let pec = posterior_given_consistent(0.95, 0.1).unwrap();
        assert!((pec - 0.095238).abs() < 1e-3);
        assert!((pec - 0.1 / 1.05).abs() < 1e-15);
        let ped = posterior_given_inconsistent(0.95, 0.1).unwrap();
        assert!((ped - 0.947368).abs() < 1e-3);
        assert!((ped - 0.9 / 0.95).abs() < 1e-15);
    }

    #[test]
    fn posterior_extremes() {
        assert_eq!(posterior_given_consistent(1.0, 0.0).unwrap(), 0.0);
        assert_eq!(posterior_given_inconsistent(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(posterior_given_consistent(0.4, 0.4).unwrap(), 0.5);
        assert_eq!(posterior_given_inconsistent(0.4, 0.4).unwrap(), 0.5);
    }

    #[test]
    fn undefined_posteriors_are_errors() {
        assert!(matches!(
            posterior_given_consistent(0.0, 0.0),
            Err(Error::UndefinedPosterior(_))
        ));
        assert!(matches!(
            posterior_given_inconsistent(1.0, 1.0),
            Err(Error::UndefinedPosterior(_))
        ));
        assert!(matches!(
            posterior_given_consistent(1.5, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn estimate_pq_counts() {
        let clean: Vec<Verdict> = (0..10).map(|i| verdict(i < 8)).collect();
        let adv: Vec<Verdict> = (0..10).map(|i| verdict(i < 2)).collect();
        let est = estimate_pq(&clean, &adv).unwrap();
        assert_eq!(est.p, 0.8);
        assert_eq!(est.q, 0.2);
        assert_eq!(est.n_clean, 10);
        assert_eq!(est.n_adv, 10);

        let all = vec![verdict(true); 4];
        let est = estimate_pq(&all, &all).unwrap();
        assert_eq!((est.p, est.q), (1.0, 1.0));
    }

    #[test]
    fn estimate_pq_rejects_empty() {
        assert!(matches!(
            estimate_pq(&[], &[verdict(true)]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn monte_carlo_converges_to_closed_form() {
        let (pec, ped) = monte_carlo_posterior(0.95, 0.1, 0.5, 100_000, 7).unwrap();
        assert!((pec.unwrap() - 0.095238).abs() < 0.02);
        assert!((ped.unwrap() - 0.947368).abs() < 0.02);
    }

    #[test]
    fn monte_carlo_degenerate_cases() {
        let (pec, ped) = monte_carlo_posterior(1.0, 0.0, 0.5, 10_000, 1).unwrap();
        assert_eq!(pec, Some(0.0));
        assert_eq!(ped, Some(1.0));

        // No adversarial draws: both conditionals are 0 where defined.
        let (pec, ped) = monte_carlo_posterior(0.5, 0.5, 0.0, 10_000, 2).unwrap();
        for c in [pec, ped].into_iter().flatten() {
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn sweep_has_expected_shape_and_cell() {
        let grid = sweep_grid(0.05, 0.05).unwrap();
        assert_eq!(grid.p_values.len(), 21);
        assert_eq!(grid.q_values.len(), 21);
        // p = 0.95 is index 19, q = 0.1 is index 2.
        let cell = grid.p_adv_given_consistent[19][2].unwrap();
        assert!((cell - posterior_given_consistent(0.95, 0.1).unwrap()).abs() < 1e-12);
        assert!(grid.p_adv_given_consistent[0][0].is_none());
        assert!(grid.p_adv_given_inconsistent[20][20].is_none());
    }

    #[test]
    fn sweep_monotone_in_both_axes() {
        let grid = sweep_grid(0.05, 0.05).unwrap();
        // P(E|C) non-decreasing in q along each row, non-increasing in p down
        // each column; P(E|D) the reverse.
        for row in &grid.p_adv_given_consistent {
            let defined: Vec<f64> = row.iter().flatten().copied().collect();
            for w in defined.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
        }
        for j in 0..grid.q_values.len() {
            let col: Vec<f64> = grid
                .p_adv_given_consistent
                .iter()
                .filter_map(|row| row[j])
                .collect();
            for w in col.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
        for row in &grid.p_adv_given_inconsistent {
            let defined: Vec<f64> = row.iter().flatten().copied().collect();
            for w in defined.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
        for j in 0..grid.q_values.len() {
            let col: Vec<f64> = grid
                .p_adv_given_inconsistent
                .iter()
                .filter_map(|row| row[j])
                .collect();
            for w in col.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }

    #[test]
    fn grid_tsv_is_stable() {
        let grid = sweep_grid(0.5, 0.5).unwrap();
        let tsv = grid.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 1 + 9);
        assert!(lines[1].starts_with("0.0000\t0.0000\tNA\t"));
    }

    proptest! {
        #[test]
        fn exchange_symmetry(p in 0.0..1.0f64, q in 0.0..1.0f64) {
            prop_assume!(p + q > 0.0);
            let a = posterior_given_consistent(p, q).unwrap();
            let b = posterior_given_consistent(q, p).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn monte_carlo_stays_in_unit_interval(
            p in 0.0..1.0f64,
            q in 0.0..1.0f64,
            prior in 0.0..1.0f64,
            seed in 0u64..1000,
        ) {
            let (pec, ped) = monte_carlo_posterior(p, q, prior, 500, seed).unwrap();
            for c in [pec, ped].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&c));
            }
        }
    }
}
