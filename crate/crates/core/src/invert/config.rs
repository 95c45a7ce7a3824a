//! Line-based `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gaussianize::{parse_patch, GaussianizeConfig, Whitening};
use crate::optimize::LbfgsConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Deblur,
    Csmri,
    Eikonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReparamKind {
    None,
    Spherical,
    Orthogonal,
    Glayers,
}

/// Source of the ground-truth image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthKind {
    /// Rendered by the toy generator from a seeded Gaussian latent.
    Toy,
    /// Piecewise-constant shapes outside the generator range.
    Blocks,
}

macro_rules! keyword_enum {
    ($ty:ident, $what:literal, $($var:ident => $name:literal),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$var),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $name,)+ })
            }
        }
    };
}

keyword_enum!(ProblemKind, "problem", Deblur => "deblur", Csmri => "csmri", Eikonal => "eikonal");
keyword_enum!(ReparamKind, "reparam", None => "none", Spherical => "spherical", Orthogonal => "orthogonal", Glayers => "glayers");
keyword_enum!(TruthKind, "truth", Toy => "toy", Blocks => "blocks");

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub problem: ProblemKind,
    pub reparam: ReparamKind,
    /// One restart per seed.
    pub seeds: Vec<u64>,
    pub latent: [usize; 2],
    pub truth: TruthKind,
    pub truth_seed: u64,
    /// Ground-truth image file; overrides `truth`.
    pub truth_path: Option<PathBuf>,
    /// Observed data file; skips simulation and noise.
    pub data_path: Option<PathBuf>,
    pub patch: Vec<usize>,
    pub gaussianize: GaussianizeConfig,
    pub optimizer: LbfgsConfig,
    pub noise_seed: u64,
    /// csmri: target SNR in dB (`inf` for noiseless data).
    pub snr_db: f64,
    /// deblur: additive noise std on the 8-bit scale.
    pub noise_std_8bit: f64,
    /// eikonal: multiplicative traveltime noise std.
    pub traveltime_std: f64,
    pub blur_sigma: f64,
    /// Kernel width assumed during inversion; defaults to `blur_sigma`.
    pub blur_sigma_inversion: Option<f64>,
    pub accl: f64,
    pub center_lines: usize,
    pub mask_seed: u64,
    pub spacing: f64,
    pub sources_per_side: usize,
    pub history_csv: Option<PathBuf>,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Csmri,
            reparam: ReparamKind::Glayers,
            seeds: vec![0, 1, 2],
            latent: [16, 16],
            truth: TruthKind::Toy,
            truth_seed: 1234,
            truth_path: None,
            data_path: None,
            patch: vec![2, 2],
            gaussianize: GaussianizeConfig::default(),
            optimizer: LbfgsConfig::default(),
            noise_seed: 7,
            snr_db: 20.0,
            noise_std_8bit: crate::models::noise::DEBLUR_NOISE_8BIT,
            traveltime_std: crate::models::noise::TRAVELTIME_NOISE_STD,
            blur_sigma: 3.0,
            blur_sigma_inversion: None,
            accl: 4.0,
            center_lines: 8,
            mask_seed: 0,
            spacing: crate::models::eikonal::DESK_SPACING,
            sources_per_side: crate::models::eikonal::DESK_SOURCES_PER_SIDE,
            history_csv: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

impl InversionConfig {
    /// Parses config text; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), lineno).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", lineno + 1)));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let g = &mut self.gaussianize;
        let o = &mut self.optimizer;
        match key {
            "problem" => self.problem = v.parse()?,
            "reparam" => self.reparam = v.parse()?,
            "seeds" => {
                self.seeds = v
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "latent" => {
                let d = parse_patch(v)?;
                if d.len() != 2 {
                    return Err(Error::Config(format!("latent must be HxW, got '{v}'")));
                }
                self.latent = [d[0], d[1]];
            }
            "truth" => self.truth = v.parse()?,
            "truth_seed" => self.truth_seed = parse_num(key, v)?,
            "truth_path" => self.truth_path = Some(PathBuf::from(v)),
            "data_path" => self.data_path = Some(PathBuf::from(v)),
            "history_csv" => self.history_csv = Some(PathBuf::from(v)),
            "temperature" | "gaussianize.temperature" => g.temperature = parse_num(key, v)?,
            "gaussianize.patch" => self.patch = parse_patch(v)?,
            "gaussianize.eta" => g.eta = parse_num(key, v)?,
            "gaussianize.alpha" => g.alpha = parse_num(key, v)?,
            "gaussianize.max_outer" => g.max_outer = parse_num(key, v)?,
            "gaussianize.max_inner" => g.max_inner = parse_num(key, v)?,
            "gaussianize.tol" => g.tol = parse_num(key, v)?,
            "gaussianize.whitening" => g.whitening = v.parse::<Whitening>()?,
            "gaussianize.ica" => g.ica = parse_bool(key, v)?,
            "gaussianize.yeo_johnson" => g.yeo_johnson = parse_bool(key, v)?,
            "gaussianize.lambert" => g.lambert = parse_bool(key, v)?,
            "gaussianize.roll" => g.roll = parse_bool(key, v)?,
            "optimizer.memory" => o.memory = parse_num(key, v)?,
            "optimizer.max_iter" => o.max_iter = parse_num(key, v)?,
            "optimizer.grad_tol" => o.grad_tol = parse_num(key, v)?,
            "optimizer.c1" => o.c1 = parse_num(key, v)?,
            "optimizer.c2" => o.c2 = parse_num(key, v)?,
            "optimizer.max_ls" => o.max_ls = parse_num(key, v)?,
            "noise.seed" => self.noise_seed = parse_num(key, v)?,
            "noise.snr_db" => self.snr_db = parse_num(key, v)?,
            "noise.std_8bit" => self.noise_std_8bit = parse_num(key, v)?,
            "noise.traveltime_std" => self.traveltime_std = parse_num(key, v)?,
            "deblur.sigma" => self.blur_sigma = parse_num(key, v)?,
            "deblur.sigma_inversion" => self.blur_sigma_inversion = Some(parse_num(key, v)?),
            "csmri.accl" => self.accl = parse_num(key, v)?,
            "csmri.center_lines" => self.center_lines = parse_num(key, v)?,
            "csmri.mask_seed" => self.mask_seed = parse_num(key, v)?,
            "eikonal.spacing" => self.spacing = parse_num(key, v)?,
            "eikonal.sources_per_side" => self.sources_per_side = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.latent.contains(&0) {
            return Err(Error::Config("latent dims must be positive".into()));
        }
        if self.patch.len() != 2 {
            return Err(Error::Config(format!("patch must be 2D for a 2D latent, got {:?}", self.patch)));
        }
        self.gaussianize.validate()?;
        self.optimizer.validate()?;
        if !(self.noise_std_8bit >= 0.0 && self.traveltime_std >= 0.0) || self.snr_db.is_nan() {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if !(self.blur_sigma > 0.0) || self.blur_sigma_inversion.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("blur widths must be positive".into()));
        }
        for p in [&self.truth_path, &self.data_path].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Kernel width used by the inversion's forward model.
    pub fn inversion_sigma(&self) -> f64 {
        self.blur_sigma_inversion.unwrap_or(self.blur_sigma)
    }

    /// Every key with its resolved value; parsing the rendered text gives
    /// back an equal config.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let g = &self.gaussianize;
        let o = &self.optimizer;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("problem", self.problem.to_string());
        put("reparam", self.reparam.to_string());
        put("seeds", join(&self.seeds, ", "));
        put("latent", join(&self.latent, "x"));
        put("truth", self.truth.to_string());
        put("truth_seed", self.truth_seed.to_string());
        if let Some(p) = &self.truth_path {
            put("truth_path", p.display().to_string());
        }
        if let Some(p) = &self.data_path {
            put("data_path", p.display().to_string());
        }
        if let Some(p) = &self.history_csv {
            put("history_csv", p.display().to_string());
        }
        put("temperature", g.temperature.to_string());
        put("gaussianize.patch", join(&self.patch, "x"));
        put("gaussianize.eta", g.eta.to_string());
        put("gaussianize.alpha", g.alpha.to_string());
        put("gaussianize.max_outer", g.max_outer.to_string());
        put("gaussianize.max_inner", g.max_inner.to_string());
        put("gaussianize.tol", g.tol.to_string());
        put(
            "gaussianize.whitening",
            match g.whitening {
                Whitening::Zca => "zca",
                Whitening::Iterative => "iter",
            }
            .into(),
        );
        put("gaussianize.ica", g.ica.to_string());
        put("gaussianize.yeo_johnson", g.yeo_johnson.to_string());
        put("gaussianize.lambert", g.lambert.to_string());
        put("gaussianize.roll", g.roll.to_string());
        put("optimizer.memory", o.memory.to_string());
        put("optimizer.max_iter", o.max_iter.to_string());
        put("optimizer.grad_tol", o.grad_tol.to_string());
        put("optimizer.c1", o.c1.to_string());
        put("optimizer.c2", o.c2.to_string());
        put("optimizer.max_ls", o.max_ls.to_string());
        put("noise.seed", self.noise_seed.to_string());
        put("noise.snr_db", self.snr_db.to_string());
        put("noise.std_8bit", self.noise_std_8bit.to_string());
        put("noise.traveltime_std", self.traveltime_std.to_string());
        put("deblur.sigma", self.blur_sigma.to_string());
        if let Some(s) = self.blur_sigma_inversion {
            put("deblur.sigma_inversion", s.to_string());
        }
        put("csmri.accl", self.accl.to_string());
        put("csmri.center_lines", self.center_lines.to_string());
        put("csmri.mask_seed", self.mask_seed.to_string());
        put("eikonal.spacing", self.spacing.to_string());
        put("eikonal.sources_per_side", self.sources_per_side.to_string());
        m
    }

    pub fn render(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
