//! Turns per-objective Q-vectors, decision values and priorities into one action.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ScalarizeError;

/// Non-negative per-objective weights set by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Priorities(Vec<f64>);

impl Priorities {
    pub fn new(p: Vec<f64>) -> Result<Self, ScalarizeError> {
        if p.is_empty() {
            return Err(ScalarizeError::Empty);
        }
        if let Some((index, &value)) = p.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(ScalarizeError::NegativePriority { index, value });
        }
        Ok(Self(p))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Priorities {
    type Error = ScalarizeError;
    fn try_from(p: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<Priorities> for Vec<f64> {
    fn from(p: Priorities) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarizerConfig {
    /// When false every decision value is treated as 1.
    pub dv_enabled: bool,
    /// Upper bound of the tie-breaking noise added to every action score.
    pub mu_scale: f64,
}

impl Default for ScalarizerConfig {
    fn default() -> Self {
        Self { dv_enabled: true, mu_scale: 1e-6 }
    }
}

/// Min-max normalization to [0, 1]; a constant vector expresses no preference and maps to zeros.
pub fn scale_qvec(q: &[f64]) -> Vec<f64> {
    let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![0.0; q.len()];
    }
    q.iter().map(|v| (v - lo) / span).collect()
}

fn check_lengths<Q: AsRef<[f64]>>(qs: &[Q], weights: usize) -> Result<usize, ScalarizeError> {
    let first = qs.first().ok_or(ScalarizeError::Empty)?.as_ref().len();
    if first == 0 {
        return Err(ScalarizeError::Empty);
    }
    if qs.len() != weights {
        return Err(ScalarizeError::Length(format!("{} q-vectors but {} weights", qs.len(), weights)));
    }
    if let Some(i) = qs.iter().position(|q| q.as_ref().len() != first) {
        return Err(ScalarizeError::Length(format!(
            "q-vector {i} has {} actions, expected {first}",
            qs[i].as_ref().len()
        )));
    }
    Ok(first)
}

/// `Σ w_i · scale(q_i)`; objectives with zero weight are not read.
pub fn combine_plain<Q: AsRef<[f64]>>(qs: &[Q], w: &Priorities) -> Result<Vec<f64>, ScalarizeError> {
    let ones = vec![1.0; qs.len()];
    weighted(qs, &ones, w, &vec![0.0; check_lengths(qs, w.len())?])
}

/// `μ + Σ d_i · p_i · scale(q_i)` with `μ` drawn uniformly from `[0, mu_scale)` per action.
pub fn combine_dv<Q: AsRef<[f64]>, R: Rng + ?Sized>(
    qs: &[Q],
    d: &[f64],
    p: &Priorities,
    cfg: &ScalarizerConfig,
    rng: &mut R,
) -> Result<Vec<f64>, ScalarizeError> {
    let actions = check_lengths(qs, p.len())?;
    let mu: Vec<f64> = (0..actions).map(|_| rng.gen::<f64>() * cfg.mu_scale).collect();
    combine_dv_with_noise(qs, d, p, cfg, &mu)
}

/// [`combine_dv`] with the noise vector supplied by the caller.
pub fn combine_dv_with_noise<Q: AsRef<[f64]>>(
    qs: &[Q],
    d: &[f64],
    p: &Priorities,
    cfg: &ScalarizerConfig,
    mu: &[f64],
) -> Result<Vec<f64>, ScalarizeError> {
    let actions = check_lengths(qs, p.len())?;
    if d.len() != qs.len() {
        return Err(ScalarizeError::Length(format!("{} q-vectors but {} decision values", qs.len(), d.len())));
    }
    if mu.len() != actions {
        return Err(ScalarizeError::Length(format!("noise has {} entries, expected {actions}", mu.len())));
    }
    if cfg.dv_enabled {
        weighted(qs, d, p, mu)
    } else {
        weighted(qs, &vec![1.0; qs.len()], p, mu)
    }
}

fn weighted<Q: AsRef<[f64]>>(qs: &[Q], d: &[f64], p: &Priorities, noise: &[f64]) -> Result<Vec<f64>, ScalarizeError> {
    let mut out = vec![0.0; noise.len()];
    for ((q, &di), &pi) in qs.iter().zip(d).zip(p.as_slice()) {
        let w = di * pi;
        if w == 0.0 {
            continue;
        }
        for (o, s) in out.iter_mut().zip(scale_qvec(q.as_ref())) {
            *o += w * s;
        }
    }
    for (o, m) in out.iter_mut().zip(noise) {
        *o += m;
    }
    Ok(out)
}

/// Index of the largest score; the lowest index wins ties.
pub fn select_action(scores: &[f64]) -> usize {
    assert!(!scores.is_empty(), "cannot select from an empty score vector");
    let mut best = 0;
    for (i, v) in scores.iter().enumerate().skip(1) {
        if *v > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const PAPER_Q1: [f64; 3] = [0.0, 0.6, 1.0];
    const PAPER_Q2: [f64; 3] = [1.0, 0.5, 0.0];

    #[test]
    fn scale_examples() {
        assert_eq!(scale_qvec(&[2.0, 4.0]), vec![0.0, 1.0]);
        assert_eq!(scale_qvec(&PAPER_Q1), PAPER_Q1.to_vec());
        assert_eq!(scale_qvec(&[3.5; 3]), vec![0.0; 3]);
    }

    #[test]
    fn voting_example_picks_the_middle_action() {
        let sum = combine_plain(&[PAPER_Q1, PAPER_Q2], &Priorities::ones(2)).unwrap();
        for (got, want) in sum.iter().zip([1.0, 1.1, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(select_action(&sum), 1);
        let cfg = ScalarizerConfig::default();
        let dv = combine_dv(&[PAPER_Q1, PAPER_Q2], &[1.0, 1.0], &Priorities::ones(2), &cfg, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(select_action(&dv), 1);
    }

    #[test]
    fn zero_weight_and_single_objective() {
        let p = Priorities::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(combine_plain(&[PAPER_Q1, PAPER_Q2], &p).unwrap(), scale_qvec(&PAPER_Q1));
        assert_eq!(combine_plain(&[[2.0, 4.0]], &Priorities::ones(1)).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn selection_tie_break() {
        assert_eq!(select_action(&[5.0]), 0);
        assert_eq!(select_action(&[2.0, 2.0]), 0);
        assert_eq!(select_action(&[1.0, 1.1, 1.0]), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(Priorities::new(vec![1.0, -0.5]), Err(ScalarizeError::NegativePriority { index: 1, .. })));
        assert!(Priorities::new(vec![f64::NAN]).is_err());
        assert!(Priorities::new(vec![]).is_err());
        assert!(combine_plain(&[PAPER_Q1, PAPER_Q2], &Priorities::ones(3)).is_err());
        assert!(combine_plain(&[&[1.0, 2.0][..], &[1.0][..]], &Priorities::ones(2)).is_err());
        let cfg = ScalarizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(combine_dv(&[PAPER_Q1], &[1.0, 1.0], &Priorities::ones(1), &cfg, &mut rng).is_err());
    }

    #[test]
    fn zero_priorities_leave_only_noise() {
        let cfg = ScalarizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Priorities::new(vec![0.0, 0.0]).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            let s = combine_dv(&[PAPER_Q1, PAPER_Q2], &[1.0, 1.0], &p, &cfg, &mut rng).unwrap();
            assert!(s.iter().all(|v| (0.0..1e-6).contains(v)));
            counts[select_action(&s)] += 1;
        }
        assert!(counts.iter().all(|&c| c > 850), "{counts:?}");
    }

    #[test]
    fn priorities_round_trip_through_json() {
        let p: Priorities = serde_json::from_str("[1, 0.5, 0]").unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.5, 0.0]);
        assert_eq!(serde_json::to_string(&p).unwrap(), "[1.0,0.5,0.0]");
        assert!(serde_json::from_str::<Priorities>("[1, -1]").is_err());
    }

    fn qvec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 3)
    }

    proptest! {
        #[test]
        fn scale_is_positive_affine_invariant(q in qvec(), a in 0.01f64..100.0, b in -100.0f64..100.0) {
            let moved: Vec<f64> = q.iter().map(|v| a * v + b).collect();
            for (x, y) in scale_qvec(&q).iter().zip(scale_qvec(&moved)) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn dv_disabled_matches_plain_plus_noise(
            qs in prop::collection::vec(qvec(), 3),
            d in prop::collection::vec(0.0f64..1.0, 3),
            p in prop::collection::vec(0.0f64..3.0, 3),
            mu in prop::collection::vec(0.0f64..1e-6, 3),
        ) {
            let p = Priorities::new(p).unwrap();
            let cfg = ScalarizerConfig { dv_enabled: false, ..ScalarizerConfig::default() };
            let got = combine_dv_with_noise(&qs, &d, &p, &cfg, &mu).unwrap();
            let plain = combine_plain(&qs, &p).unwrap();
            for i in 0..3 {
                prop_assert_eq!(got[i], mu[i] + plain[i]);
            }
        }

        #[test]
        fn scores_are_bounded(
            qs in prop::collection::vec(qvec(), 3),
            d in prop::collection::vec(0.0f64..1.0, 3),
            p in prop::collection::vec(0.0f64..3.0, 3),
            seed in any::<u64>(),
        ) {
            let p = Priorities::new(p).unwrap();
            let cfg = ScalarizerConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = combine_dv(&qs, &d, &p, &cfg, &mut rng).unwrap();
            let cap: f64 = d.iter().zip(p.as_slice()).map(|(a, b)| a * b).sum();
            for v in s {
                prop_assert!(v >= 0.0 && v <= cap + cfg.mu_scale + 1e-12);
            }
        }

        #[test]
        fn extra_objective_with_zero_priority_changes_nothing(
            qs in prop::collection::vec(qvec(), 3),
            extra in qvec(),
            d in prop::collection::vec(0.0f64..1.0, 4),
            p in prop::collection::vec(0.0f64..3.0, 3),
            mu in prop::collection::vec(0.0f64..1e-6, 3),
        ) {
            let cfg = ScalarizerConfig::default();
            let base = combine_dv_with_noise(&qs, &d[..3], &Priorities::new(p.clone()).unwrap(), &cfg, &mu).unwrap();
            let mut qs4 = qs.clone();
            qs4.push(extra);
            let mut p4 = p;
            p4.push(0.0);
            let grown = combine_dv_with_noise(&qs4, &d, &Priorities::new(p4).unwrap(), &cfg, &mu).unwrap();
            prop_assert_eq!(select_action(&base), select_action(&grown));
            prop_assert_eq!(base, grown);
        }
    }
}
