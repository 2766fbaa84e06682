use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Inverted dropout: at train time kept activations are scaled by
/// `1 / (1 - rate)`, so evaluation needs no rescaling. A fresh mask is drawn
/// on every call.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    /// Evaluation mode: every call is the identity.
    pub fn disabled() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn training(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout {
            rate,
            rng: (rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        let n = g.value(x)?.len();
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        g.mask_mul(x, mask)
    }
}
