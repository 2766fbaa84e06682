use std::collections::BTreeMap;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    /// Embedding size `d`.
    pub embed: usize,
    /// Encoder GRU size `h`.
    pub hidden: usize,
    /// Inference GRU size `s`.
    pub state: usize,
    /// Inference steps `T`.
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_factor: f64,
    /// Batches between validation checks.
    pub plateau_window: usize,
    pub grad_clip: f64,
    pub dropout: f64,
    pub embedding_reg: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub fixed_query_attention: bool,
}

/// Named defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// The published full-scale setting.
    Paper,
    /// Tiny dimensions for single-core runs.
    Desk,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

impl HyperParams {
    pub fn paper() -> Self {
        HyperParams {
            embed: 384,
            hidden: 128,
            state: 512,
            steps: 8,
            batch_size: 32,
            learning_rate: 0.001,
            decay_factor: 0.8,
            plateau_window: 2000,
            grad_clip: 5.0,
            dropout: 0.2,
            embedding_reg: 0.0001,
            max_epochs: 10,
            seed: 1,
            fixed_query_attention: false,
        }
    }

    pub fn desk() -> Self {
        HyperParams {
            embed: 32,
            hidden: 32,
            state: 64,
            steps: 3,
            batch_size: 32,
            learning_rate: 0.002,
            decay_factor: 0.8,
            plateau_window: 78,
            grad_clip: 5.0,
            dropout: 0.0,
            embedding_reg: 0.0001,
            max_epochs: 10,
            seed: 1,
            fixed_query_attention: false,
        }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("embed", self.embed),
            ("hidden", self.hidden),
            ("state", self.state),
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("plateau_window", self.plateau_window),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let rates = [
            ("learning_rate", self.learning_rate),
            ("decay_factor", self.decay_factor),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.embedding_reg.is_finite() && self.embedding_reg >= 0.0) {
            return Err(Error::Config("embedding_reg must be non-negative".into()));
        }
        Ok(())
    }

    /// `key=value` pairs in a fixed order. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("embed", self.embed.to_string()),
            ("hidden", self.hidden.to_string()),
            ("state", self.state.to_string()),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("plateau_window", self.plateau_window.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("dropout", self.dropout.to_string()),
            ("embedding_reg", self.embedding_reg.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("fixed_query_attention", self.fixed_query_attention.to_string()),
        ];
        v.drain(..).map(|(k, val)| (k.to_string(), val)).collect()
    }

    pub fn from_pairs(map: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = map
                .get(key)
                .ok_or_else(|| Error::Format(format!("header lacks {key}")))?;
            raw.parse()
                .map_err(|_| Error::Format(format!("header {key}={raw:?} does not parse")))
        }
        let h = HyperParams {
            embed: get(map, "embed")?,
            hidden: get(map, "hidden")?,
            state: get(map, "state")?,
            steps: get(map, "steps")?,
            batch_size: get(map, "batch_size")?,
            learning_rate: get(map, "learning_rate")?,
            decay_factor: get(map, "decay_factor")?,
            plateau_window: get(map, "plateau_window")?,
            grad_clip: get(map, "grad_clip")?,
            dropout: get(map, "dropout")?,
            embedding_reg: get(map, "embedding_reg")?,
            max_epochs: get(map, "max_epochs")?,
            seed: get(map, "seed")?,
            fixed_query_attention: get(map, "fixed_query_attention")?,
        };
        Ok(h)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { self.$f = v; } )* };
        }
        set!(
            embed,
            hidden,
            state,
            steps,
            batch_size,
            learning_rate,
            decay_factor,
            plateau_window,
            grad_clip,
            dropout,
            embedding_reg,
            max_epochs,
            seed,
            fixed_query_attention
        );
    }
}

/// Partial hyperparameters, as read from a config file or the command line.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub embed: Option<usize>,
    pub hidden: Option<usize>,
    pub state: Option<usize>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub decay_factor: Option<f64>,
    pub plateau_window: Option<usize>,
    pub grad_clip: Option<f64>,
    pub dropout: Option<f64>,
    pub embedding_reg: Option<f64>,
    pub max_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub fixed_query_attention: Option<bool>,
}
