//! Engine parameters and the `key = value` config file format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MttError, Result};
use crate::kalman::KalmanParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    Pixel,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub image_width: f64,
    pub image_height: f64,

    // tracklet generation
    pub w_median: usize,
    pub theta_s: f64,
    pub nms_iou: f64,
    pub d: f64,
    pub stride: usize,
    pub l_max: usize,
    pub u: u32,
    pub eps: f64,
    pub delta: usize,
    pub theta_mot: f64,
    pub theta_app: f64,

    // tracklet tracking
    pub prune_depth: usize,
    pub theta_null: f64,
    pub patience: u32,
    pub max_leaves: usize,
    pub w_mot: f64,
    pub w_app: f64,
    pub w_conf: f64,

    /// Length scale of the position affinity `exp(-dist / sigma_pos)`.
    pub sigma_pos: f64,
    pub distance: DistanceMode,
    /// Weight of the cosine-distance term in weighted mode.
    pub alpha: f64,
    /// Weight of the diagonal-normalized center term in weighted mode.
    pub beta: f64,
    /// DBSCAN radius used in weighted mode (normalized units).
    pub eps_weighted: f64,
    pub kf_process_pos_var: f64,
    pub kf_process_vel_var: f64,
    pub kf_meas_var: f64,
    pub kf_init_vel_var: f64,
    pub v_space: f64,
    /// Score subtracted per frame a dummy node covers.
    pub miss_penalty: f64,
    /// Score subtracted from the root of every new tree.
    pub birth_penalty: f64,
    pub mwis_exact_max: usize,
    pub clique_budget: usize,
    /// Solve clique components above `clique_budget` greedily instead of
    /// failing.
    pub greedy_fallback: bool,
}

impl Default for Config {
    fn default() -> Self {
        let (w, h) = (1920.0, 1080.0);
        Config {
            image_width: w,
            image_height: h,
            w_median: 5,
            theta_s: 0.1,
            nms_iou: 0.5,
            d: 5.0,
            stride: 1,
            l_max: 5,
            u: 70,
            eps: 80.0,
            delta: 2,
            theta_mot: 15.0,
            theta_app: 0.85,
            prune_depth: 2,
            theta_null: 0.3,
            patience: 10,
            max_leaves: 8,
            w_mot: 0.1,
            w_app: 0.9,
            w_conf: 3.0,
            sigma_pos: 80.0,
            distance: DistanceMode::Pixel,
            alpha: 1.0,
            beta: 1.0,
            eps_weighted: 0.25,
            kf_process_pos_var: 1.0,
            kf_process_vel_var: 0.25,
            kf_meas_var: 1.0,
            kf_init_vel_var: 1e3,
            v_space: w * h,
            miss_penalty: 0.3,
            birth_penalty: 4.0,
            mwis_exact_max: 40,
            clique_budget: 70,
            greedy_fallback: false,
        }
    }
}

impl Config {
    pub fn kalman(&self) -> KalmanParams {
        KalmanParams {
            process_pos_var: self.kf_process_pos_var,
            process_vel_var: self.kf_process_vel_var,
            meas_var: self.kf_meas_var,
            init_vel_var: self.kf_init_vel_var,
        }
    }

    pub fn image_diagonal(&self) -> f64 {
        self.image_width.hypot(self.image_height)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("image_width", self.image_width),
            ("image_height", self.image_height),
            ("theta_s", self.theta_s),
            ("nms_iou", self.nms_iou),
            ("d", self.d),
            ("eps", self.eps),
            ("theta_mot", self.theta_mot),
            ("sigma_pos", self.sigma_pos),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("eps_weighted", self.eps_weighted),
            ("kf_process_pos_var", self.kf_process_pos_var),
            ("kf_process_vel_var", self.kf_process_vel_var),
            ("kf_meas_var", self.kf_meas_var),
            ("kf_init_vel_var", self.kf_init_vel_var),
            ("v_space", self.v_space),
            ("miss_penalty", self.miss_penalty),
            ("birth_penalty", self.birth_penalty),
        ];
        for (k, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MttError::Config(format!("{k} must be finite and >= 0, got {v}")));
            }
        }
        for (k, v) in [("w_mot", self.w_mot), ("w_app", self.w_app), ("w_conf", self.w_conf)] {
            if !v.is_finite() {
                return Err(MttError::Config(format!("{k} must be finite")));
            }
        }
        if self.w_median == 0 || self.w_median.is_multiple_of(2) {
            return Err(MttError::Config(format!(
                "w_median must be odd and >= 1, got {}",
                self.w_median
            )));
        }
        if !(0.0..=1.0).contains(&self.theta_s) || !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(MttError::Config("theta_s and nms_iou must lie in [0,1]".into()));
        }
        if !(-1.0..=1.0).contains(&self.theta_app) {
            return Err(MttError::Config("theta_app must lie in [-1,1]".into()));
        }
        if !(self.theta_null > 0.0 && self.theta_null < 1.0) {
            return Err(MttError::Config("theta_null must lie in (0,1)".into()));
        }
        if self.l_max == 0 || self.delta == 0 || self.stride == 0 || self.prune_depth == 0 {
            return Err(MttError::Config(
                "l_max, delta, stride and prune_depth must be >= 1".into(),
            ));
        }
        if self.max_leaves == 0 {
            return Err(MttError::Config("max_leaves must be >= 1".into()));
        }
        if self.mwis_exact_max > 64 {
            return Err(MttError::Config("mwis_exact_max must be <= 64".into()));
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment. Unknown keys are returned as warnings.
    pub fn from_kv_str(text: &str) -> Result<(Config, Vec<String>)> {
        let mut cfg = Config::default();
        let mut warnings = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| MttError::parse(i + 1, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match cfg.set(key, value) {
                Ok(true) => {}
                Ok(false) => warnings.push(format!("line {}: unknown config key `{key}`", i + 1)),
                Err(e) => return Err(MttError::parse(i + 1, e.to_string())),
            }
        }
        cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn load(path: &Path) -> Result<(Config, Vec<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| MttError::io(path, e))?;
        Config::from_kv_str(&text)
    }

    /// Sets one parameter from its textual value. Returns `Ok(false)` for
    /// an unknown key. Changing the image size also resets `v_space`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse::<T>()
                .map_err(|_| MttError::Config(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "image_width" => {
                self.image_width = num(key, value)?;
                self.v_space = self.image_width * self.image_height;
            }
            "image_height" => {
                self.image_height = num(key, value)?;
                self.v_space = self.image_width * self.image_height;
            }
            "w_median" => self.w_median = num(key, value)?,
            "theta_s" => self.theta_s = num(key, value)?,
            "nms_iou" => self.nms_iou = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "stride" | "S" => self.stride = num(key, value)?,
            "l_max" => self.l_max = num(key, value)?,
            "u" => self.u = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "theta_mot" => self.theta_mot = num(key, value)?,
            "theta_app" => self.theta_app = num(key, value)?,
            "prune_depth" | "k" => self.prune_depth = num(key, value)?,
            "theta_null" => self.theta_null = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "max_leaves" => self.max_leaves = num(key, value)?,
            "w_mot" => self.w_mot = num(key, value)?,
            "w_app" => self.w_app = num(key, value)?,
            "w_conf" => self.w_conf = num(key, value)?,
            "sigma_pos" => self.sigma_pos = num(key, value)?,
            "distance" => {
                self.distance = match value {
                    "pixel" => DistanceMode::Pixel,
                    "weighted" => DistanceMode::Weighted,
                    other => {
                        return Err(MttError::Config(format!(
                            "distance must be `pixel` or `weighted`, got `{other}`"
                        )))
                    }
                }
            }
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "eps_weighted" => self.eps_weighted = num(key, value)?,
            "kf_process_pos_var" => self.kf_process_pos_var = num(key, value)?,
            "kf_process_vel_var" => self.kf_process_vel_var = num(key, value)?,
            "kf_meas_var" => self.kf_meas_var = num(key, value)?,
            "kf_init_vel_var" => self.kf_init_vel_var = num(key, value)?,
            "v_space" => self.v_space = num(key, value)?,
            "miss_penalty" => self.miss_penalty = num(key, value)?,
            "birth_penalty" => self.birth_penalty = num(key, value)?,
            "mwis_exact_max" => self.mwis_exact_max = num(key, value)?,
            "clique_budget" => self.clique_budget = num(key, value)?,
            "greedy_fallback" => self.greedy_fallback = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Renders the config in the same `key = value` format it is read from.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let v = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = v {
            for (k, val) in map {
                let text = match val {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                let _ = writeln!(s, "{k} = {text}");
            }
        }
        s
    }
}
