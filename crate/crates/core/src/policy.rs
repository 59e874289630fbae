//! Acting with an ensemble of per-objective networks.

use rand::Rng;
use serde::Serialize;

use crate::env::Observation;
use crate::error::PolicyError;
use crate::nn::{frames_to_input, Network};
use crate::objective::{readout, Readout};
use crate::scalarize::{combine_dv, select_action, Priorities, ScalarizerConfig};

/// Which objectives need a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluate {
    /// All of them, e.g. for display.
    All,
    /// Only those with nonzero priority; the others cannot affect the action.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub action: usize,
    pub scores: Vec<f64>,
    /// `None` for objectives that were skipped.
    pub readouts: Vec<Option<Readout>>,
}

/// Greedy action under `combine_dv`.
pub fn decide<R: Rng + ?Sized>(
    nets: &[&Network<f32>],
    obs: &Observation,
    priorities: &Priorities,
    cfg: &ScalarizerConfig,
    evaluate: Evaluate,
    noise: &mut R,
) -> Result<Decision, PolicyError> {
    let first = nets.first().ok_or(PolicyError::EmptyEnsemble)?;
    let actions = first.spec().actions;
    let input: Vec<f32> = frames_to_input(&[&obs.pixels]);
    let mut readouts = Vec::with_capacity(nets.len());
    for (i, net) in nets.iter().enumerate() {
        let needed = evaluate == Evaluate::All || priorities.as_slice().get(i).is_some_and(|p| *p != 0.0);
        readouts.push(if needed { Some(readout(net, &input, 1)?.remove(0)) } else { None });
    }
    let placeholder = vec![0.0; actions];
    let qs: Vec<&[f64]> = readouts.iter().map(|r| r.as_ref().map_or(&placeholder[..], |r| &r.q[..])).collect();
    let d: Vec<f64> = readouts.iter().map(|r| r.as_ref().map_or(0.0, |r| r.d)).collect();
    let scores = combine_dv(&qs, &d, priorities, cfg, noise)?;
    Ok(Decision { action: select_action(&scores), scores, readouts })
}

/// ε-greedy: a uniform random action with probability `epsilon`, otherwise [`decide`].
///
/// The exploration coin is always drawn from `explore`, so its stream does not
/// depend on what the networks output.
#[allow(clippy::too_many_arguments)]
pub fn act<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    nets: &[&Network<f32>],
    obs: &Observation,
    epsilon: f64,
    priorities: &Priorities,
    cfg: &ScalarizerConfig,
    explore: &mut R1,
    noise: &mut R2,
) -> Result<usize, PolicyError> {
    let actions = nets.first().ok_or(PolicyError::EmptyEnsemble)?.spec().actions;
    if explore.gen::<f64>() < epsilon {
        return Ok(explore.gen_range(0..actions));
    }
    Ok(decide(nets, obs, priorities, cfg, Evaluate::Weighted, noise)?.action)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    use super::*;
    use crate::nn::NetworkSpec;

    fn obs() -> Observation {
        Observation { width: 50, height: 50, pixels: (0..2500).map(|i| (i % 256) as u8).collect() }
    }

    /// A zero network whose advantage bias encodes `q` (the dueling mean is subtracted).
    fn fixed_q(q: [f32; 3]) -> Network<f32> {
        let mut net = Network::zeroed(NetworkSpec::cleaner()).unwrap();
        net.params_mut().get_mut("advantage.bias").unwrap().data_mut().copy_from_slice(&q);
        net
    }

    #[test]
    fn greedy_single_objective() {
        let net = fixed_q([0.0, 1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = act(&[&net], &obs(), 0.0, &Priorities::ones(1), &ScalarizerConfig::default(), &mut rng.clone(), &mut rng)
            .unwrap();
        assert_eq!(a, 1);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = fixed_q([0.0, 1.0, 0.0]);
        let mut explore = ChaCha8Rng::seed_from_u64(1);
        let mut noise = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0f64; 3];
        let n = 10_000;
        for _ in 0..n {
            let a = act(&[&net], &obs(), 1.0, &Priorities::ones(1), &ScalarizerConfig::default(), &mut explore, &mut noise)
                .unwrap();
            counts[a] += 1.0;
        }
        let expected = n as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn zero_priority_objectives_are_skipped() {
        let nets = [fixed_q([1.0, 0.0, 0.0]), fixed_q([0.0, 0.0, 1.0])];
        let refs: Vec<&Network<f32>> = nets.iter().collect();
        let p = Priorities::new(vec![0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = decide(&refs, &obs(), &p, &ScalarizerConfig::default(), Evaluate::Weighted, &mut rng).unwrap();
        assert!(d.readouts[0].is_none());
        assert_eq!(d.action, 2);
        let all = decide(&refs, &obs(), &p, &ScalarizerConfig::default(), Evaluate::All, &mut rng).unwrap();
        assert!(all.readouts.iter().all(Option::is_some));
        assert_eq!(all.action, 2);
    }
}
