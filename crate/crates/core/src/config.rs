//! Run configuration: every tunable constant, loadable from `key = value`
//! text and overridable one key at a time.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::classes::{default_priors, ClassPrior, CLASS_NAMES, NUM_CLASSES};
use crate::codec::{AssignConfig, LossConfig};
use crate::eval::{EvalConfig, RecallSamples};
use crate::overlap::OverlapMetric;
use crate::pipeline::{GlobalNms, InferenceConfig, OracleConfig, TrainingConfig};
use crate::synth::SceneParams;
use crate::viewport::ViewConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key}: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("line {line}: {source}")]
    AtLine { line: usize, source: Box<ConfigError> },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub view: ViewConfig,
    pub priors: [ClassPrior; NUM_CLASSES],
    pub loss: LossConfig,
    pub assign: AssignConfig,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub global_nms: Option<GlobalNms>,
    pub oracle: OracleConfig,
    pub eval: EvalConfig,
    pub synth: SceneParams,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let infer = InferenceConfig::default();
        Self {
            view: ViewConfig::default(),
            priors: default_priors(),
            loss: LossConfig::default(),
            assign: AssignConfig::default(),
            score_threshold: infer.score_threshold,
            nms_iou: infer.nms_iou,
            global_nms: infer.global_nms,
            oracle: OracleConfig::default(),
            eval: EvalConfig::default(),
            synth: SceneParams::default(),
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
        }),
    }
}

fn class_key(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|n| n.eq_ignore_ascii_case(name))
}

impl RunConfig {
    /// Applies `key = value` lines over the current values. Blank lines and
    /// `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim()).map_err(|e| ConfigError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let p = |v: &str| parse::<f64>(key, v);
        match key {
            "seed" => self.seed = parse(key, value)?,
            "view.out_height" => self.view.out_height = parse(key, value)?,
            "view.out_width" => self.view.out_width = parse(key, value)?,
            "view.viewport_height" => self.view.viewport_height = p(value)?,
            "view.z_res" => self.view.z_res = p(value)?,
            "view.z_min" => self.view.z_min = p(value)?,
            "view.z_max" => self.view.z_max = p(value)?,
            "view.n_views" => self.view.n_views = parse(key, value)?,
            "view.p_guided" => self.view.p_guided = p(value)?,
            "view.y_perturb" => self.view.y_perturb = p(value)?,
            "view.y_offset" => self.view.y_offset = p(value)?,
            "view.width_multiple" => self.view.width_multiple = parse(key, value)?,
            "view.min_viewport_depth" => self.view.min_viewport_depth = p(value)?,
            "loss.w_conf2d" => self.loss.weights.conf_2d = p(value)?,
            "loss.w_reg2d" => self.loss.weights.reg_2d = p(value)?,
            "loss.w_reg3d" => self.loss.weights.reg_3d = p(value)?,
            "loss.w_conf3d" => self.loss.weights.conf_3d = p(value)?,
            "loss.focal_gamma" => self.loss.focal_gamma = p(value)?,
            "loss.focal_alpha" => self.loss.focal_alpha = p(value)?,
            "loss.huber_delta" => self.loss.huber_delta = p(value)?,
            "loss.temperature" => self.loss.temperature = p(value)?,
            "loss.smooth_l1_beta" => self.loss.smooth_l1_beta = p(value)?,
            "assign.positive_iou" => self.assign.positive_iou = p(value)?,
            "assign.negative_iou" => self.assign.negative_iou = p(value)?,
            "infer.score_threshold" => self.score_threshold = p(value)?,
            "infer.nms_iou" => self.nms_iou = p(value)?,
            "infer.global_nms" => {
                self.global_nms = match value {
                    "off" | "none" => None,
                    m => Some(GlobalNms {
                        metric: parse(key, m)?,
                        threshold: self.global_nms.map_or(0.5, |g| g.threshold),
                    }),
                }
            }
            "infer.global_nms_iou" => {
                let t = p(value)?;
                match &mut self.global_nms {
                    Some(g) => g.threshold = t,
                    None => {
                        self.global_nms = Some(GlobalNms {
                            metric: OverlapMetric::Bev,
                            threshold: t,
                        })
                    }
                }
            }
            "oracle.noise_center" => self.oracle.noise.center = p(value)?,
            "oracle.noise_depth" => self.oracle.noise.depth = p(value)?,
            "oracle.noise_size" => self.oracle.noise.size = p(value)?,
            "oracle.noise_rotation" => self.oracle.noise.rotation = p(value)?,
            "oracle.drop_prob" => self.oracle.drop_prob = p(value)?,
            "oracle.clutter_rate" => self.oracle.clutter_rate = p(value)?,
            "eval.recall" => {
                self.eval.recall = match value.to_ascii_lowercase().as_str() {
                    "r40" => RecallSamples::R40,
                    "r11" => RecallSamples::R11,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "eval.metrics" => {
                self.eval.metrics = value
                    .split(',')
                    .map(|m| parse::<OverlapMetric>(key, m.trim()))
                    .collect::<Result<_, _>>()?
            }
            "eval.dont_care_overlap" => self.eval.dont_care_overlap = p(value)?,
            "synth.min_objects" => self.synth.min_objects = parse(key, value)?,
            "synth.max_objects" => self.synth.max_objects = parse(key, value)?,
            "synth.z_lo" => self.synth.z_lo = p(value)?,
            "synth.z_hi" => self.synth.z_hi = p(value)?,
            "synth.size_jitter" => self.synth.size_jitter = p(value)?,
            "synth.camera_height" => self.synth.camera_height = p(value)?,
            "synth.truncation" => self.synth.truncation = parse_bool(key, value)?,
            "synth.occlusion" => self.synth.occlusion = parse_bool(key, value)?,
            "synth.max_2d_iou" => {
                self.synth.max_2d_iou = match value {
                    "none" | "off" => None,
                    v => Some(p(v)?),
                }
            }
            "synth.min_nearest_depth" => self.synth.min_nearest_depth = p(value)?,
            "synth.render" => self.synth.render = parse_bool(key, value)?,
            _ => return self.set_class_key(key, value),
        }
        Ok(())
    }

    /// `prior.<class>.<field>`, `eval.iou.<class>` and `synth.weight.<class>`.
    fn set_class_key(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let unknown = || ConfigError::UnknownKey(key.to_string());
        let parts: Vec<&str> = key.split('.').collect();
        let v: f64 = parse(key, value)?;
        match parts.as_slice() {
            ["prior", field] => {
                for c in self.priors.iter_mut() {
                    match *field {
                        "mu_z" => c.mu_z = v,
                        "sigma_z" => c.sigma_z = v,
                        _ => return Err(unknown()),
                    }
                }
            }
            ["prior", class, field] => {
                let c = &mut self.priors[class_key(class).ok_or_else(unknown)?];
                match *field {
                    "w" => c.size.w = v,
                    "h" => c.size.h = v,
                    "l" => c.size.l = v,
                    "mu_z" => c.mu_z = v,
                    "sigma_z" => c.sigma_z = v,
                    _ => return Err(unknown()),
                }
            }
            ["eval", "iou", class] => self.eval.iou_thresholds[class_key(class).ok_or_else(unknown)?] = v,
            ["synth", "weight", class] => self.synth.class_weights[class_key(class).ok_or_else(unknown)?] = v,
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`apply_text`](Self::apply_text) reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        let v = &self.view;
        kv("view.out_height", v.out_height.to_string());
        kv("view.out_width", v.out_width.to_string());
        kv("view.viewport_height", v.viewport_height.to_string());
        kv("view.z_res", v.z_res.to_string());
        kv("view.z_min", v.z_min.to_string());
        kv("view.z_max", v.z_max.to_string());
        kv("view.n_views", v.n_views.to_string());
        kv("view.p_guided", v.p_guided.to_string());
        kv("view.y_perturb", v.y_perturb.to_string());
        kv("view.y_offset", v.y_offset.to_string());
        kv("view.width_multiple", v.width_multiple.to_string());
        kv("view.min_viewport_depth", v.min_viewport_depth.to_string());
        for (name, c) in CLASS_NAMES.iter().zip(&self.priors) {
            let n = name.to_ascii_lowercase();
            kv(&format!("prior.{n}.w"), c.size.w.to_string());
            kv(&format!("prior.{n}.h"), c.size.h.to_string());
            kv(&format!("prior.{n}.l"), c.size.l.to_string());
            kv(&format!("prior.{n}.mu_z"), c.mu_z.to_string());
            kv(&format!("prior.{n}.sigma_z"), c.sigma_z.to_string());
        }
        let l = &self.loss;
        kv("loss.w_conf2d", l.weights.conf_2d.to_string());
        kv("loss.w_reg2d", l.weights.reg_2d.to_string());
        kv("loss.w_reg3d", l.weights.reg_3d.to_string());
        kv("loss.w_conf3d", l.weights.conf_3d.to_string());
        kv("loss.focal_gamma", l.focal_gamma.to_string());
        kv("loss.focal_alpha", l.focal_alpha.to_string());
        kv("loss.huber_delta", l.huber_delta.to_string());
        kv("loss.temperature", l.temperature.to_string());
        kv("loss.smooth_l1_beta", l.smooth_l1_beta.to_string());
        kv("assign.positive_iou", self.assign.positive_iou.to_string());
        kv("assign.negative_iou", self.assign.negative_iou.to_string());
        kv("infer.score_threshold", self.score_threshold.to_string());
        kv("infer.nms_iou", self.nms_iou.to_string());
        match self.global_nms {
            None => kv("infer.global_nms", "off".into()),
            Some(g) => {
                kv("infer.global_nms", g.metric.to_string());
                kv("infer.global_nms_iou", g.threshold.to_string());
            }
        }
        let o = &self.oracle;
        kv("oracle.noise_center", o.noise.center.to_string());
        kv("oracle.noise_depth", o.noise.depth.to_string());
        kv("oracle.noise_size", o.noise.size.to_string());
        kv("oracle.noise_rotation", o.noise.rotation.to_string());
        kv("oracle.drop_prob", o.drop_prob.to_string());
        kv("oracle.clutter_rate", o.clutter_rate.to_string());
        let e = &self.eval;
        for (name, t) in CLASS_NAMES.iter().zip(e.iou_thresholds) {
            kv(&format!("eval.iou.{}", name.to_ascii_lowercase()), t.to_string());
        }
        kv(
            "eval.recall",
            match e.recall {
                RecallSamples::R40 => "r40",
                RecallSamples::R11 => "r11",
            }
            .into(),
        );
        kv(
            "eval.metrics",
            e.metrics.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("eval.dont_care_overlap", e.dont_care_overlap.to_string());
        let p = &self.synth;
        kv("synth.min_objects", p.min_objects.to_string());
        kv("synth.max_objects", p.max_objects.to_string());
        for (name, w) in CLASS_NAMES.iter().zip(p.class_weights) {
            kv(&format!("synth.weight.{}", name.to_ascii_lowercase()), w.to_string());
        }
        kv("synth.z_lo", p.z_lo.to_string());
        kv("synth.z_hi", p.z_hi.to_string());
        kv("synth.size_jitter", p.size_jitter.to_string());
        kv("synth.camera_height", p.camera_height.to_string());
        kv("synth.truncation", p.truncation.to_string());
        kv("synth.occlusion", p.occlusion.to_string());
        kv(
            "synth.max_2d_iou",
            p.max_2d_iou.map_or("none".into(), |v| v.to_string()),
        );
        kv("synth.min_nearest_depth", p.min_nearest_depth.to_string());
        kv("synth.render", p.render.to_string());
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        self.view.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(c) = self.priors.iter().position(|p| !p.is_valid()) {
            return inv(format!("prior of {} must be positive", CLASS_NAMES[c]));
        }
        let w = self.loss.weights;
        if [w.conf_2d, w.reg_2d, w.reg_3d, w.conf_3d].iter().any(|x| !(*x > 0.0)) {
            return inv("loss weights must be positive".into());
        }
        if !(self.loss.huber_delta > 0.0 && self.loss.temperature > 0.0 && self.loss.smooth_l1_beta > 0.0) {
            return inv("huber_delta, temperature and smooth_l1_beta must be positive".into());
        }
        if !(self.assign.negative_iou <= self.assign.positive_iou) {
            return inv("negative IoU threshold exceeds the positive one".into());
        }
        if !(0.0..=1.0).contains(&self.score_threshold) || !(0.0..=1.0).contains(&self.nms_iou) {
            return inv("score and NMS thresholds must lie in [0, 1]".into());
        }
        self.oracle.validate().map_err(ConfigError::Invalid)?;
        self.eval.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.synth.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            view: self.view.clone(),
            priors: self.priors,
            score_threshold: self.score_threshold,
            nms_iou: self.nms_iou,
            global_nms: self.global_nms,
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            view: self.view.clone(),
            priors: self.priors,
            assign: self.assign,
        }
    }
}
