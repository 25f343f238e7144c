use serde::{Deserialize, Serialize};

use crate::data::{BoundaryPolicy, DEFAULT_OFFSETS};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nn::NetConfig;

/// Every run setting in one flat document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub width: usize,
    pub height: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub disc_base_channels: usize,
    pub pose_channels: usize,
    pub motion_dim: usize,
    pub motion_offsets: Vec<usize>,
    pub refine: bool,
    pub minibatch_std: bool,
    pub boundary: BoundaryPolicy,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iterations: usize,
    pub l1_weight: f64,
    pub vgg_weight: f64,
    pub gan_weight: f64,
    pub r1_gamma: f64,
    /// Apply the gradient penalty every this many steps (0 disables it).
    pub r1_interval: usize,
    pub seed: u64,
    /// Checkpoint every this many steps (0: only at the end of a run).
    pub checkpoint_interval: usize,
    pub device: String,
    /// Decay of an exponential moving average of generator-side weights;
    /// `None` keeps no average.
    pub ema_decay: Option<f64>,
    pub perceptual_seed: u64,
    /// Archive with perceptual filters; `None` uses seeded random filters.
    pub perceptual_weights: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Hyperparameters as published: 512x512, batch 16, learning rate 0.02.
    pub fn paper() -> Self {
        Self {
            width: 512,
            height: 512,
            batch_size: 16,
            learning_rate: 0.02,
            iterations: 100_000,
            ..Self::desk()
        }
    }

    /// Full-width networks at 256x256 with a conservative learning rate.
    pub fn desk() -> Self {
        Self {
            width: 256,
            height: 256,
            base_channels: 64,
            max_channels: 512,
            disc_base_channels: 64,
            pose_channels: 512,
            motion_dim: 2048,
            motion_offsets: DEFAULT_OFFSETS.to_vec(),
            refine: true,
            minibatch_std: true,
            boundary: BoundaryPolicy::Clamp,
            batch_size: 4,
            learning_rate: 0.002,
            beta1: 0.0,
            beta2: 0.99,
            iterations: 20_000,
            l1_weight: 1.0,
            vgg_weight: 1.0,
            gan_weight: 1.0,
            r1_gamma: 10.0,
            r1_interval: 16,
            seed: 0,
            checkpoint_interval: 5_000,
            device: "cpu".into(),
            ema_decay: None,
            perceptual_seed: 0,
            perceptual_weights: None,
        }
    }

    /// 64x64 networks small enough to train on a CPU.
    pub fn tiny() -> Self {
        let net = NetConfig::tiny(64, 64);
        Self {
            width: net.width,
            height: net.height,
            base_channels: net.base_channels,
            max_channels: net.max_channels,
            disc_base_channels: net.disc_base_channels,
            pose_channels: net.pose_channels,
            motion_dim: net.motion_dim,
            iterations: 2_000,
            checkpoint_interval: 0,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::config(format!("unknown preset '{other}' (paper, desk, tiny)"))),
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            width: self.width,
            height: self.height,
            base_channels: self.base_channels,
            max_channels: self.max_channels,
            disc_base_channels: self.disc_base_channels,
            pose_channels: self.pose_channels,
            motion_dim: self.motion_dim,
            motion_offsets: self.motion_offsets.clone(),
            refine: self.refine,
            minibatch_std: self.minibatch_std,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            l1: self.l1_weight,
            vgg: self.vgg_weight,
            gan: self.gan_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net_config().validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("learning rate must be positive and betas in [0, 1)"));
        }
        let w = [self.l1_weight, self.vgg_weight, self.gan_weight, self.r1_gamma];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::config("loss weights and r1_gamma must be finite and non-negative"));
        }
        if self.device != "cpu" {
            return Err(Error::config(format!("unsupported device '{}'", self.device)));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::config("ema_decay must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Parses a flat JSON document; absent keys take the `desk` defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_over(&Self::desk(), text)
    }

    /// Parses a flat JSON document whose absent keys keep the values of `base`.
    pub fn from_json_over(base: &Self, text: &str) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::config(e.to_string());
        let overlay: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let serde_json::Value::Object(fields) = overlay else {
            return Err(Error::config("configuration must be a JSON object"));
        };
        let mut merged = serde_json::to_value(base)?;
        let obj = merged.as_object_mut().expect("struct serializes to an object");
        for (k, v) in fields {
            obj.insert(k, v);
        }
        let cfg: Self = serde_json::from_value(merged).map_err(bad)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for p in ["paper", "desk", "tiny"] {
            TrainConfig::preset(p).unwrap().validate().unwrap();
        }
        assert_eq!(TrainConfig::paper().learning_rate, 0.02);
        assert_eq!(TrainConfig::desk().learning_rate, 0.002);
        assert!(TrainConfig::preset("huge").is_err());
    }

    #[test]
    fn json_round_trip_and_partial_documents() {
        let c = TrainConfig::tiny();
        let back = TrainConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial = TrainConfig::from_json(r#"{"iterations": 7}"#).unwrap();
        assert_eq!(partial.iterations, 7);
        assert!(TrainConfig::from_json(r#"{"width": 30}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let over = TrainConfig::from_json_over(&TrainConfig::tiny(), r#"{"seed": 3}"#).unwrap();
        assert_eq!(over, TrainConfig { seed: 3, ..TrainConfig::tiny() });
        assert!(TrainConfig::from_json(r#"{"motion_offsets": [2, 1]}"#).is_err());
    }
}
