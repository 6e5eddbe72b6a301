//! Truth values for logic atoms derived from yes/no model evidence.
//!
//! Both routes land in `[-1, 1]`: `-1` is certainly false, `0` undecided and
//! `1` certainly true.

use super::DnfError;

/// Truth value from open-logit evidence: `2 * e^yes / (e^yes + e^no) - 1`.
///
/// Evaluated as `2 * sigmoid(yes - no) - 1` so large logits never overflow.
pub fn truth_from_logits(v_yes: f64, v_no: f64) -> Result<f64, DnfError> {
    if !v_yes.is_finite() || !v_no.is_finite() {
        return Err(DnfError::NonFiniteInput);
    }
    let d = v_yes - v_no;
    // 2*sigmoid(d) - 1 == tanh(d/2), which keeps full precision near both ends.
    Ok((0.5 * d).tanh())
}

/// Truth value from sampled answers: `2 * yes / (yes + no) - 1`.
pub fn truth_from_samples(m_yes: u64, m_no: u64) -> Result<f64, DnfError> {
    let total = m_yes + m_no;
    if total == 0 {
        return Err(DnfError::NoSamples);
    }
    Ok(2.0 * m_yes as f64 / total as f64 - 1.0)
}

/// A single atom value, clamped into `[-1, 1]` at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomTruth {
    pub predicate_index: usize,
    pub atom_index: usize,
    mu: f64,
}

impl AtomTruth {
    pub fn new(predicate_index: usize, atom_index: usize, mu: f64) -> Self {
        let mu = if mu.is_nan() { 0.0 } else { mu.clamp(-1.0, 1.0) };
        Self {
            predicate_index,
            atom_index,
            mu,
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_evidence_is_undecided() {
        assert_eq!(truth_from_logits(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(truth_from_logits(7.5, 7.5).unwrap(), 0.0);
        assert_eq!(truth_from_samples(2, 2).unwrap(), 0.0);
    }

    #[test]
    fn ln3_gives_one_half() {
        // 2 * 3/(3+1) - 1
        let mu = truth_from_logits(3f64.ln(), 0.0).unwrap();
        assert!((mu - 0.5).abs() < 1e-12);
        assert!((truth_from_samples(3, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn strong_no_stays_above_minus_one() {
        let mu = truth_from_logits(0.0, 20.0).unwrap();
        // 2*sigmoid(-20) - 1 = -1 + 2/(1+e^20)
        let expected = -1.0 + 2.0 / (1.0 + 20f64.exp());
        assert!(mu > -1.0);
        assert!((mu - expected).abs() < 1e-15);
        assert!((mu + 1.0 - 4.122307e-9).abs() < 1e-14);
    }

    #[test]
    fn boundaries_and_errors() {
        assert_eq!(truth_from_samples(0, 5).unwrap(), -1.0);
        assert_eq!(truth_from_samples(5, 0).unwrap(), 1.0);
        assert_eq!(truth_from_samples(0, 0), Err(DnfError::NoSamples));
        assert_eq!(truth_from_logits(f64::NAN, 0.0), Err(DnfError::NonFiniteInput));
        assert_eq!(truth_from_logits(0.0, f64::INFINITY), Err(DnfError::NonFiniteInput));
    }

    #[test]
    fn atom_truth_clamps() {
        assert_eq!(AtomTruth::new(0, 0, 3.0).mu(), 1.0);
        assert_eq!(AtomTruth::new(0, 1, -1.5).mu(), -1.0);
        assert_eq!(AtomTruth::new(1, 0, 0.25).mu(), 0.25);
    }

    #[test]
    fn monotone_on_grid() {
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.5).collect();
        for &no in &grid {
            for w in grid.windows(2) {
                let a = truth_from_logits(w[0], no).unwrap();
                let b = truth_from_logits(w[1], no).unwrap();
                assert!(b > a, "not increasing in yes at ({}, {no})", w[0]);
                let a = truth_from_logits(no, w[0]).unwrap();
                let b = truth_from_logits(no, w[1]).unwrap();
                assert!(b < a, "not decreasing in no at ({no}, {})", w[0]);
            }
        }
    }

    #[test]
    fn sample_and_logit_routes_agree() {
        for i in 1..=9u64 {
            let p = i as f64 / 10.0;
            let m = 10u64;
            let from_samples = truth_from_samples(i, m - i).unwrap();
            let from_logits = truth_from_logits((p / (1.0 - p)).ln(), 0.0).unwrap();
            assert!((from_samples - from_logits).abs() < 1e-12, "p={p}");
        }
    }
}
