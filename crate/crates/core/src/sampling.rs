//! Exact sampling over enumerated allowed states.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::grassmann::GrassmannParams;
use crate::scalar::Real;
use crate::schema::{enumerate_allowed_states, DummyState, VariableSchema};

/// Allowed states with their probabilities and a weighted index over them.
#[derive(Clone, Debug)]
pub struct StateSampler {
    states: Vec<DummyState>,
    probs: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl StateSampler {
    /// Build from explicit states and (possibly slightly negative) weights.
    pub fn new(states: Vec<DummyState>, weights: Vec<f64>) -> Result<Self> {
        if states.len() != weights.len() {
            return Err(Error::dim("states and weights differ in length"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < -1e-12) {
            return Err(Error::Numerical(format!("invalid state weight {w}")));
        }
        let clamped: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("all state weights are zero".into()));
        }
        let probs: Vec<f64> = clamped.iter().map(|w| w / total).collect();
        let index = WeightedIndex::new(&clamped)
            .map_err(|e| Error::Numerical(format!("weighted index: {e}")))?;
        Ok(StateSampler {
            states,
            probs,
            index,
        })
    }

    /// Sampler for a Grassmann model over the allowed states of `schema`.
    pub fn from_grassmann<T: Real>(
        schema: &VariableSchema,
        p: &GrassmannParams<T>,
        cap: usize,
    ) -> Result<Self> {
        if schema.q() != p.q() {
            return Err(Error::dim("schema does not match model"));
        }
        let states = enumerate_allowed_states(schema, cap)?;
        let weights = states
            .iter()
            .map(|s| p.joint_probability(s.bits()).map(|x| x.to_f64().unwrap_or(f64::NAN)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(states, weights)
    }

    pub fn states(&self) -> &[DummyState] {
        &self.states
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Index into [`states`](Self::states) of one draw.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &DummyState {
        &self.states[self.sample_index(rng)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{VariableDecl, DEFAULT_STATE_CAP};
    use crate::structured::{assemble_lambda, StructuredParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frequencies_within_four_sigma() {
        let schema = VariableSchema::new(vec![
            VariableDecl::categorical("c", 3),
            VariableDecl::ordinal("o", 3),
        ])
        .unwrap();
        let sp = StructuredParams::independent(&schema, vec![vec![0.4, -0.3], vec![0.2, 0.7]]).unwrap();
        let p = assemble_lambda(&schema, &sp, false).unwrap();
        let s = StateSampler::from_grassmann(&schema, &p, DEFAULT_STATE_CAP).unwrap();
        let n = 100_000;
        let mut counts = vec![0usize; s.states().len()];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..n {
            counts[s.sample_index(&mut rng)] += 1;
        }
        for (c, &p) in counts.iter().zip(s.probabilities()) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() <= 4.0 * sd);
        }
    }

    #[test]
    fn rejects_negative_weight() {
        let st = vec![DummyState::zeros(1), DummyState::from_mask(1, 1)];
        assert!(StateSampler::new(st, vec![1.0, -0.5]).is_err());
    }
}
