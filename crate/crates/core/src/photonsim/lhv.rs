//! Local hidden-variable models over setting bits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::Outcome;

/// One value of λ: its weight and the probability of a +1 outcome for each
/// setting bit on either side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LhvComponent {
    pub weight: f64,
    pub alice_plus: [f64; 2],
    pub bob_plus: [f64; 2],
}

/// ρ(λ) as a finite mixture; responses factorize by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LhvStrategy {
    pub components: Vec<LhvComponent>,
}

impl Default for LhvStrategy {
    /// Every outcome +1: saturates the local bound.
    fn default() -> Self {
        LhvStrategy::deterministic(0)
    }
}

fn sign_probability(sign: bool) -> f64 {
    if sign {
        0.0
    } else {
        1.0
    }
}

impl LhvStrategy {
    pub fn new(components: Vec<LhvComponent>) -> Result<Self> {
        let s = LhvStrategy { components };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config(
                "local strategy needs at least one component".into(),
            ));
        }
        let mut total = 0.0;
        for c in &self.components {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::Config(format!(
                    "component weight {} is invalid",
                    c.weight
                )));
            }
            total += c.weight;
            for p in c.alice_plus.iter().chain(&c.bob_plus) {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::Config(format!(
                        "response probability {p} outside [0, 1]"
                    )));
                }
            }
        }
        if !(total > 0.0) {
            return Err(Error::Config("component weights sum to zero".into()));
        }
        Ok(())
    }

    /// Deterministic strategy `code` in 0..16; bits 0–1 are Alice's answers
    /// for setting 0 and 1, bits 2–3 Bob's. A set bit means −1.
    pub fn deterministic(code: u8) -> Self {
        let bit = |i: u8| sign_probability(code >> i & 1 == 1);
        LhvStrategy {
            components: vec![LhvComponent {
                weight: 1.0,
                alice_plus: [bit(0), bit(1)],
                bob_plus: [bit(2), bit(3)],
            }],
        }
    }

    pub fn all_deterministic() -> impl Iterator<Item = LhvStrategy> {
        (0..16).map(Self::deterministic)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, components: usize) -> Self {
        let components = (0..components.max(1))
            .map(|_| LhvComponent {
                weight: rng.random::<f64>(),
                alice_plus: [rng.random(), rng.random()],
                bob_plus: [rng.random(), rng.random()],
            })
            .collect();
        LhvStrategy { components }
    }

    fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn correlation(&self, a_bit: u8, b_bit: u8) -> f64 {
        let (a, b) = (a_bit as usize & 1, b_bit as usize & 1);
        let sum: f64 = self
            .components
            .iter()
            .map(|c| c.weight * (2.0 * c.alice_plus[a] - 1.0) * (2.0 * c.bob_plus[b] - 1.0))
            .sum();
        sum / self.total_weight()
    }

    /// |E00 + E10 + E01 − E11| over setting bits.
    pub fn chsh(&self) -> f64 {
        (self.correlation(0, 0) + self.correlation(1, 0) + self.correlation(0, 1)
            - self.correlation(1, 1))
        .abs()
    }

    pub fn sample_lambda<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut x = rng.random::<f64>() * self.total_weight();
        for (i, c) in self.components.iter().enumerate() {
            if x < c.weight {
                return i;
            }
            x -= c.weight;
        }
        self.components.len() - 1
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, a_bit: u8, b_bit: u8) -> (Outcome, Outcome) {
        let c = &self.components[self.sample_lambda(rng)];
        let draw = |rng: &mut R, p: f64| {
            if rng.random::<f64>() < p {
                Outcome::Plus
            } else {
                Outcome::Minus
            }
        };
        let a = draw(rng, c.alice_plus[a_bit as usize & 1]);
        let b = draw(rng, c.bob_plus[b_bit as usize & 1]);
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::seeded_rng;

    #[test]
    fn deterministic_strategies_reach_but_never_pass_two() {
        let best = LhvStrategy::all_deterministic()
            .map(|s| s.chsh())
            .fold(0.0, f64::max);
        assert_eq!(best, 2.0);
        assert!(LhvStrategy::all_deterministic().all(|s| s.chsh() == 2.0));
    }

    #[test]
    fn random_mixtures_obey_bound() {
        let mut rng = seeded_rng(4, 0);
        for _ in 0..2000 {
            let s = LhvStrategy::random(&mut rng, 5);
            assert!(s.chsh() <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn sampling_follows_correlations() {
        let mut rng = seeded_rng(8, 0);
        let s = LhvStrategy::random(&mut rng, 3);
        let n = 200_000;
        let mut sum = 0i64;
        for _ in 0..n {
            let (a, b) = s.sample(&mut rng, 1, 0);
            sum += (a.sign() * b.sign()) as i64;
        }
        let e = sum as f64 / n as f64;
        assert!((e - s.correlation(1, 0)).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn invalid_strategies_fail_validation() {
        let bad = LhvStrategy {
            components: vec![LhvComponent {
                weight: 1.0,
                alice_plus: [1.2, 0.0],
                bob_plus: [0.0, 0.0],
            }],
        };
        assert!(bad.validate().is_err());
        assert!(LhvStrategy { components: vec![] }.validate().is_err());
    }
}
