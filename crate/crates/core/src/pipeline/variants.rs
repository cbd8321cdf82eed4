use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::luti::EmbedMode;
use crate::registry::Registry;

use super::train::{approximate, train_baseline, train_direct, train_lattice, TrainConfig, TrainOutcome};

/// A training recipe for one embedding family.
pub trait Variant: Send + Sync {
    fn name(&self) -> &'static str;

    /// Interpolation mode at inference, `None` for the plain MLP.
    fn mode(&self) -> Option<EmbedMode>;

    fn train(&self, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome>;
}

pub struct MlpBaseline;

impl Variant for MlpBaseline {
    fn name(&self) -> &'static str {
        "mlp_baseline"
    }
    fn mode(&self) -> Option<EmbedMode> {
        None
    }
    fn train(&self, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
        train_baseline(data, cfg, self.name())
    }
}

/// MLP trained through lattice interpolation.
pub struct LatticeE2e {
    pub name: &'static str,
    pub mode: EmbedMode,
}

impl Variant for LatticeE2e {
    fn name(&self) -> &'static str {
        self.name
    }
    fn mode(&self) -> Option<EmbedMode> {
        Some(self.mode)
    }
    fn train(&self, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
        train_lattice(data, cfg, self.name, self.mode)
    }
}

/// Frozen baseline baked onto the lattice with no further training.
pub struct Approx {
    pub name: &'static str,
    pub mode: EmbedMode,
}

impl Variant for Approx {
    fn name(&self) -> &'static str {
        self.name
    }
    fn mode(&self) -> Option<EmbedMode> {
        Some(self.mode)
    }
    fn train(&self, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
        let (base, history) = match &cfg.base_model {
            Some(m) => ((**m).clone(), Vec::new()),
            None => {
                let out = train_baseline(data, cfg, "mlp_baseline")?;
                (out.model, out.history)
            }
        };
        Ok(TrainOutcome {
            model: approximate(&base, cfg, self.name, self.mode)?,
            history,
        })
    }
}

/// Table entries trained directly with total-variation smoothing.
pub struct Direct {
    pub name: &'static str,
    pub mode: EmbedMode,
}

impl Variant for Direct {
    fn name(&self) -> &'static str {
        self.name
    }
    fn mode(&self) -> Option<EmbedMode> {
        Some(self.mode)
    }
    fn train(&self, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
        train_direct(data, cfg, self.name, self.mode)
    }
}

pub type VariantFactory = fn() -> Box<dyn Variant>;

pub fn variants() -> Registry<VariantFactory> {
    use EmbedMode::*;
    Registry::<VariantFactory>::new("variant")
        .with("mlp_baseline", || Box::new(MlpBaseline))
        .with("luti_uni_e2e", || Box::new(LatticeE2e { name: "luti_uni_e2e", mode: Uniform }))
        .with("luti_irr_e2e", || Box::new(LatticeE2e { name: "luti_irr_e2e", mode: Irregular }))
        .with("lut_e2e", || Box::new(LatticeE2e { name: "lut_e2e", mode: Nearest }))
        .with("lut_approx", || Box::new(Approx { name: "lut_approx", mode: Nearest }))
        .with("luti_approx", || Box::new(Approx { name: "luti_approx", mode: Uniform }))
        .with("lut_direct", || Box::new(Direct { name: "lut_direct", mode: Nearest }))
        .with("luti_direct", || Box::new(Direct { name: "luti_direct", mode: Uniform }))
}

pub fn variant(name: &str) -> Result<Box<dyn Variant>> {
    Ok((variants().get(name)?)())
}

/// Trains the named variant.
pub fn train(name: &str, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let v = variant(name)?;
    if v.mode().is_some() && cfg.d < 2 {
        return Err(Error::invalid(format!("{name} needs d >= 2, got {}", cfg.d)));
    }
    v.train(data, cfg)
}
