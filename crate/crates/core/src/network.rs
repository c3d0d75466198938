//! The full segmentation network and its configuration.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::blocks::{DecoderBlock, Encoder, FsaBlock, Initializer, MpcaBlock, PredictionHead, VGG16_WIDTHS};
use crate::error::{Error, Result};
use crate::fourier::FilterMode;
use crate::param::ParameterRegistry;
use crate::tensor::RealTensor4;

/// Storage precision of parameters. Arithmetic always runs in `f64`; a
/// single-precision model keeps every stored parameter value representable
/// as `f32` and checkpoints it as `f32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }

    /// Round a tensor to this precision in place.
    pub fn round(self, t: &mut RealTensor4) {
        if self == Precision::Single {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(Error::Config(format!("unknown precision {other:?}"))),
        }
    }
}

/// Architecture hyperparameters. Encoder widths are fixed to the VGG16 stages.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub n_classes: usize,
    pub input_hw: (usize, usize),
    pub mask_rho: f64,
    pub filter_mode: FilterMode,
    pub precision: Precision,
    pub seed: u64,
    pub use_mpca: bool,
    pub use_fsa: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            n_classes: 2,
            input_hw: (224, 224),
            mask_rho: 0.5,
            filter_mode: FilterMode::Broadcast,
            precision: Precision::Double,
            seed: 0,
            use_mpca: true,
            use_fsa: true,
        }
    }
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

pub(crate) fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl ModelConfig {
    /// A small configuration used by tests and smoke runs.
    pub fn toy(n_classes: usize) -> Self {
        ModelConfig {
            input_channels: 1,
            n_classes,
            input_hw: (32, 32),
            ..ModelConfig::default()
        }
    }

    pub fn encoder_channels(&self) -> [usize; 5] {
        VGG16_WIDTHS
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            bad.push(format!("input_hw {h}x{w} must be positive multiples of 16"));
        }
        if self.n_classes < 2 || self.n_classes > 256 {
            bad.push(format!("n_classes {} must lie in 2..=256", self.n_classes));
        }
        if !(self.mask_rho > 0.0 && self.mask_rho <= 1.0) {
            bad.push(format!("mask_rho {} must lie in (0, 1]", self.mask_rho));
        }
        if self.input_channels == 0 {
            bad.push("input_channels must be at least 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Set one field from its textual `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input_channels" => self.input_channels = parse_num(key, value)?,
            "n_classes" => self.n_classes = parse_num(key, value)?,
            "input_hw" => {
                let parts: Vec<&str> = value.split(['x', ',']).map(str::trim).collect();
                match parts.as_slice() {
                    [s] => {
                        let v = parse_num(key, s)?;
                        self.input_hw = (v, v);
                    }
                    [a, b] => self.input_hw = (parse_num(key, a)?, parse_num(key, b)?),
                    _ => return Err(Error::Config(format!("{key}: expected HxW, got {value:?}"))),
                }
            }
            "mask_rho" => self.mask_rho = parse_num(key, value)?,
            "filter_mode" => self.filter_mode = value.parse()?,
            "precision" => self.precision = value.parse()?,
            "seed" => self.seed = parse_num(key, value)?,
            "use_mpca" => self.use_mpca = parse_bool(key, value)?,
            "use_fsa" => self.use_fsa = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    /// `key = value` lines, readable back with [`ModelConfig::from_text`].
    pub fn to_text(&self) -> String {
        format!(
            "input_channels = {}\nn_classes = {}\ninput_hw = {}x{}\nmask_rho = {:?}\nfilter_mode = {}\nprecision = {}\nseed = {}\nuse_mpca = {}\nuse_fsa = {}\n",
            self.input_channels,
            self.n_classes,
            self.input_hw.0,
            self.input_hw.1,
            self.mask_rho,
            self.filter_mode.as_str(),
            self.precision.as_str(),
            self.seed,
            self.use_mpca,
            self.use_fsa
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::ConfigParse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Fields that change the parameter set; the seed is excluded.
    pub fn architecture_mismatch(&self, other: &ModelConfig) -> Option<String> {
        let mut diffs = Vec::new();
        let mut cmp = |name: &str, a: String, b: String| {
            if a != b {
                diffs.push(format!("{name}: {a} vs {b}"));
            }
        };
        cmp("input_channels", self.input_channels.to_string(), other.input_channels.to_string());
        cmp("n_classes", self.n_classes.to_string(), other.n_classes.to_string());
        cmp("input_hw", format!("{:?}", self.input_hw), format!("{:?}", other.input_hw));
        cmp("mask_rho", self.mask_rho.to_string(), other.mask_rho.to_string());
        cmp("filter_mode", self.filter_mode.as_str().into(), other.filter_mode.as_str().into());
        cmp("precision", self.precision.as_str().into(), other.precision.as_str().into());
        cmp("use_mpca", self.use_mpca.to_string(), other.use_mpca.to_string());
        cmp("use_fsa", self.use_fsa.to_string(), other.use_fsa.to_string());
        (!diffs.is_empty()).then(|| diffs.join(", "))
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Parameter totals by block family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParameterCounts {
    pub total: usize,
    pub encoder: usize,
    pub mpca: usize,
    pub fsa: usize,
    pub decoder: usize,
    pub head: usize,
}

impl fmt::Display for ParameterCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "encoder\t{}", self.encoder)?;
        writeln!(f, "mpca\t{}", self.mpca)?;
        writeln!(f, "fsa\t{}", self.fsa)?;
        writeln!(f, "decoder\t{}", self.decoder)?;
        writeln!(f, "head\t{}", self.head)?;
        write!(f, "total\t{}", self.total)
    }
}

/// Intermediate activations of one forward pass.
pub struct ForwardTrace {
    /// Encoder features `F_1..F_5`.
    pub features: Vec<Var>,
    /// Skip features after MPCA and FSA, levels 1..4.
    pub skips: Vec<Var>,
    /// Decoder outputs `D_1..D_4`.
    pub decoded: Vec<Var>,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub registry: ParameterRegistry,
    pub encoder: Encoder,
    /// Levels 1..4; empty when MPCA is disabled.
    pub mpca: Vec<MpcaBlock>,
    /// Levels 1..4; empty when FSA is disabled.
    pub fsa: Vec<FsaBlock>,
    /// Levels 1..4 (`decoders[0]` is `D_1`).
    pub decoders: Vec<DecoderBlock>,
    pub head: PredictionHead,
}

impl Model {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut reg = ParameterRegistry::new();
        let mut init = Initializer::new(config.seed);
        let widths = config.encoder_channels();
        let (h, w) = config.input_hw;
        let encoder = Encoder::new(&mut reg, &mut init, config.input_channels, &widths)?;
        let mut mpca = Vec::new();
        if config.use_mpca {
            for i in 0..4 {
                mpca.push(MpcaBlock::new(&mut reg, &mut init, i + 1, widths[i], widths[i + 1])?);
            }
        }
        let mut fsa = Vec::new();
        if config.use_fsa {
            for (i, &c) in widths.iter().take(4).enumerate() {
                fsa.push(FsaBlock::new(
                    &mut reg,
                    &mut init,
                    i + 1,
                    c,
                    h >> i,
                    w >> i,
                    config.mask_rho,
                    config.filter_mode,
                )?);
            }
        }
        let mut decoders = Vec::with_capacity(4);
        for i in 0..4 {
            decoders.push(DecoderBlock::new(&mut reg, &mut init, i + 1, widths[i], widths[i + 1])?);
        }
        let head = PredictionHead::new(&mut reg, &mut init, widths[0], config.n_classes)?;
        let mut model = Model {
            config: config.clone(),
            registry: reg,
            encoder,
            mpca,
            fsa,
            decoders,
            head,
        };
        model.round_to_precision();
        Ok(model)
    }

    /// Re-apply the configured storage precision to every parameter.
    pub fn round_to_precision(&mut self) {
        let p = self.config.precision;
        if p == Precision::Single {
            for param in self.registry.iter_mut() {
                p.round(param.value_mut());
            }
        }
    }

    pub fn parameter_counts(&self) -> ParameterCounts {
        let r = &self.registry;
        ParameterCounts {
            total: r.total(),
            encoder: r.count_prefix("enc"),
            mpca: r.count_prefix("mpca"),
            fsa: r.count_prefix("fsa"),
            decoder: r.count_prefix("dec"),
            head: r.count_prefix("head"),
        }
    }

    fn check_input(&self, d: crate::tensor::Dims) -> Result<()> {
        let (h, w) = self.config.input_hw;
        if d.c() != self.config.input_channels || d.h() != h || d.w() != w {
            return Err(Error::Shape(format!(
                "model expects [N, {}, {h}, {w}] input, got {d}",
                self.config.input_channels
            )));
        }
        Ok(())
    }

    pub fn forward_trace(&self, tape: &mut Tape, image: &Var) -> Result<ForwardTrace> {
        self.check_input(image.dims())?;
        let reg = &self.registry;
        let features = self.encoder.forward(tape, reg, image)?;
        let mut skips = Vec::with_capacity(4);
        for i in 0..4 {
            let mut s = match self.mpca.get(i) {
                Some(block) => block.forward(tape, reg, &features[i], &features[i + 1])?,
                None => features[i].clone(),
            };
            if let Some(block) = self.fsa.get(i) {
                s = block.forward(tape, reg, &s)?;
            }
            skips.push(s);
        }
        let mut decoded: Vec<Option<Var>> = vec![None; 4];
        let mut below = features[4].clone();
        for i in (0..4).rev() {
            let d = self.decoders[i].forward(tape, reg, &skips[i], &below)?;
            below = d.clone();
            decoded[i] = Some(d);
        }
        let logits = self.head.forward(tape, reg, &below)?;
        Ok(ForwardTrace {
            features,
            skips,
            decoded: decoded.into_iter().map(|d| d.expect("all decoder levels run")).collect(),
            logits,
        })
    }

    pub fn forward(&self, tape: &mut Tape, image: &Var) -> Result<Var> {
        Ok(self.forward_trace(tape, image)?.logits)
    }

    /// Logits without recording a tape.
    pub fn predict(&self, image: &RealTensor4) -> Result<RealTensor4> {
        let mut tape = Tape::inference();
        let x = tape.constant(image.clone());
        Ok(self.forward(&mut tape, &x)?.into_value())
    }

    /// Mark every parameter frozen (or trainable again).
    pub fn set_trainable(&mut self, trainable: bool) {
        for p in self.registry.iter_mut() {
            p.trainable = trainable;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_roundtrip() {
        let cfg = ModelConfig {
            n_classes: 4,
            input_hw: (64, 32),
            mask_rho: 0.25,
            filter_mode: FilterMode::PerChannel,
            precision: Precision::Single,
            seed: 17,
            use_fsa: false,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn validation_lists_fields() {
        let cfg = ModelConfig {
            n_classes: 1,
            input_hw: (30, 32),
            ..ModelConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("n_classes") && msg.contains("input_hw"), "{msg}");
        assert!(Model::build(&ModelConfig { mask_rho: 0.0, ..ModelConfig::toy(2) }).is_err());
    }

    #[test]
    fn names_and_counts() {
        let model = Model::build(&ModelConfig::toy(4)).unwrap();
        let r = &model.registry;
        for name in [
            "enc1.conv0.weight",
            "enc5.conv2.bias",
            "mpca4.up.weight",
            "fsa1.filter",
            "fsa4.sa.conv.weight",
            "dec1.conv1.weight",
            "head.conv1.bias",
        ] {
            assert!(r.by_name(name).is_some(), "{name}");
        }
        assert_eq!(r.by_name("head.conv1.bias").unwrap().numel(), 4);
        let c = model.parameter_counts();
        assert_eq!(c.encoder + c.mpca + c.fsa + c.decoder + c.head, c.total);
        let fsa_filters: usize = (0..4).map(|i| (32usize >> i).pow(2)).sum();
        assert_eq!(c.fsa, fsa_filters + 4 * (2 * 49 + 1));
    }

    #[test]
    fn ablation_flags_drop_blocks() {
        let cfg = ModelConfig {
            use_mpca: false,
            use_fsa: false,
            ..ModelConfig::toy(2)
        };
        let model = Model::build(&cfg).unwrap();
        let c = model.parameter_counts();
        assert_eq!((c.mpca, c.fsa), (0, 0));
        let x = RealTensor4::full([1, 1, 32, 32], 0.5);
        assert_eq!(model.predict(&x).unwrap().dims().0, [1, 2, 32, 32]);
    }

    #[test]
    fn single_precision_values_are_f32() {
        let cfg = ModelConfig {
            precision: Precision::Single,
            ..ModelConfig::toy(2)
        };
        let model = Model::build(&cfg).unwrap();
        for p in model.registry.iter() {
            assert!(p.value().data().iter().all(|&v| v == v as f32 as f64));
        }
    }
}
