use std::fmt;
use std::str::FromStr;

use super::{bank, crneta, crnetb};
use crate::error::{config_err, Error, Result};
use crate::kv::{join_list, KvMap};
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Pre-upsampling: consumes the bicubic-interpolated image.
    CrnetA,
    /// Post-upsampling, one set of scale-specific modules per scale.
    CrnetB,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::CrnetA => "crnet-a",
            ModelKind::CrnetB => "crnet-b",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "crnet-a" | "a" => Ok(ModelKind::CrnetA),
            "crnet-b" | "b" => Ok(ModelKind::CrnetB),
            _ => Err(config_err!("unknown model '{s}' (crnet-a, crnet-b)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrnetAConfig {
    pub c: usize,
    pub n0: usize,
    pub m0: usize,
    pub s: usize,
    pub k: usize,
    /// Add the input to the reconstruction. Off gives the plain variant
    /// that must predict the whole image.
    pub residual: bool,
}

impl Default for CrnetAConfig {
    fn default() -> Self {
        CrnetAConfig {
            c: 1,
            n0: 128,
            m0: 256,
            s: 3,
            k: 25,
            residual: true,
        }
    }
}

impl CrnetAConfig {
    pub fn tiny(n0: usize, m0: usize, k: usize) -> Self {
        CrnetAConfig {
            n0,
            m0,
            k,
            ..Self::default()
        }
    }

    /// `s²·(n0·c + n0² + m0·n0 + m0² + n0·m0 + c·n0)`.
    pub fn closed_form_param_count(&self) -> usize {
        let (c, n0, m0, s) = (self.c, self.n0, self.m0, self.s);
        s * s * (n0 * c + n0 * n0 + m0 * n0 + m0 * m0 + n0 * m0 + c * n0)
    }

    pub fn param_shapes(&self) -> Vec<(String, Shape)> {
        let (c, n0, m0, s) = (self.c, self.n0, self.m0, self.s);
        vec![
            (crneta::F0.into(), bank(n0, c, s)),
            (crneta::F1.into(), bank(n0, n0, s)),
            (crneta::WL.into(), bank(m0, n0, s)),
            (crneta::S.into(), bank(m0, m0, s)),
            (crneta::WH.into(), bank(n0, m0, s)),
            (crneta::H.into(), bank(c, n0, s)),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrnetBConfig {
    pub c: usize,
    pub n0: usize,
    pub m0: usize,
    pub s: usize,
    pub k: usize,
    /// Sorted, without duplicates, each in {2, 3, 4}.
    pub scales: Vec<usize>,
}

impl Default for CrnetBConfig {
    fn default() -> Self {
        CrnetBConfig {
            c: 3,
            n0: 64,
            m0: 1024,
            s: 3,
            k: 25,
            scales: vec![2, 3, 4],
        }
    }
}

impl CrnetBConfig {
    pub fn param_shapes(&self) -> Vec<(String, Shape)> {
        let (c, n0, m0, s) = (self.c, self.n0, self.m0, self.s);
        let mut shapes = vec![
            (crnetb::HEAD.to_string(), bank(n0, c, s)),
            (crneta::F0.into(), bank(n0, n0, s)),
            (crneta::F1.into(), bank(n0, n0, s)),
            (crneta::WL.into(), bank(m0, n0, s)),
            (crneta::S.into(), bank(m0, m0, s)),
            (crneta::WH.into(), bank(n0, m0, s)),
            (crneta::H.into(), bank(n0, n0, s)),
        ];
        for &r in &self.scales {
            let (pa, pb) = crnetb::pre_names(r);
            shapes.push((pa, bank(n0, n0, s)));
            shapes.push((pb, bank(n0, n0, s)));
            let ups = crnetb::upsampler_names(r);
            if r == 4 {
                shapes.push((ups[0].clone(), bank(4 * c, n0, s)));
                shapes.push((ups[1].clone(), bank(4 * c, c, s)));
            } else {
                shapes.push((ups[0].clone(), bank(c * r * r, n0, s)));
            }
        }
        shapes.push((crnetb::TAIL.to_string(), bank(c, c, s)));
        shapes
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelConfig {
    A(CrnetAConfig),
    B(CrnetBConfig),
}

impl From<CrnetAConfig> for ModelConfig {
    fn from(c: CrnetAConfig) -> Self {
        ModelConfig::A(c)
    }
}

impl From<CrnetBConfig> for ModelConfig {
    fn from(c: CrnetBConfig) -> Self {
        ModelConfig::B(c)
    }
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::CrnetA => ModelConfig::A(CrnetAConfig::default()),
            ModelKind::CrnetB => ModelConfig::B(CrnetBConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::A(_) => ModelKind::CrnetA,
            ModelConfig::B(_) => ModelKind::CrnetB,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            ModelConfig::A(c) => c.c,
            ModelConfig::B(c) => c.c,
        }
    }

    pub fn recursions(&self) -> usize {
        match self {
            ModelConfig::A(c) => c.k,
            ModelConfig::B(c) => c.k,
        }
    }

    /// Scales the model can produce; CRNet-A handles any integer scale.
    pub fn supports_scale(&self, scale: usize) -> bool {
        match self {
            ModelConfig::A(_) => scale >= 1,
            ModelConfig::B(c) => c.scales.contains(&scale),
        }
    }

    pub fn param_shapes(&self) -> Vec<(String, Shape)> {
        match self {
            ModelConfig::A(c) => c.param_shapes(),
            ModelConfig::B(c) => c.param_shapes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, n0, m0, s, k) = match self {
            ModelConfig::A(a) => (a.c, a.n0, a.m0, a.s, a.k),
            ModelConfig::B(b) => (b.c, b.n0, b.m0, b.s, b.k),
        };
        if c == 0 || n0 == 0 || m0 == 0 {
            return Err(config_err!(
                "channel counts must be >= 1 (c={c}, n0={n0}, m0={m0})"
            ));
        }
        if s % 2 == 0 {
            return Err(config_err!("kernel size must be odd, got {s}"));
        }
        if k == 0 {
            return Err(config_err!("recursion count K must be >= 1"));
        }
        if let ModelConfig::B(b) = self {
            if b.scales.is_empty() {
                return Err(config_err!("CRNet-B needs at least one scale"));
            }
            if let Some(r) = b.scales.iter().find(|r| !(2..=4).contains(*r)) {
                return Err(config_err!("unsupported CRNet-B scale {r} (2, 3, 4)"));
            }
            if b.scales.windows(2).any(|w| w[0] >= w[1]) {
                return Err(config_err!("CRNet-B scales must be strictly increasing"));
            }
        }
        Ok(())
    }

    /// Keys understood by [`ModelConfig::from_kv`].
    pub const KEYS: &'static [&'static str] =
        &["model", "c", "n0", "m0", "s", "k", "residual", "scales"];

    /// Read `model` plus any architecture keys, defaulting the rest. Other
    /// keys are ignored so the same file can carry training settings.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let kind: ModelKind = kv.require("model")?;
        let cfg = match kind {
            ModelKind::CrnetA => {
                let d = CrnetAConfig::default();
                ModelConfig::A(CrnetAConfig {
                    c: kv.parse_or("c", d.c)?,
                    n0: kv.parse_or("n0", d.n0)?,
                    m0: kv.parse_or("m0", d.m0)?,
                    s: kv.parse_or("s", d.s)?,
                    k: kv.parse_or("k", d.k)?,
                    residual: kv.parse_or("residual", d.residual)?,
                })
            }
            ModelKind::CrnetB => {
                let d = CrnetBConfig::default();
                let mut scales = kv.parse_list("scales")?.unwrap_or(d.scales);
                scales.sort_unstable();
                scales.dedup();
                ModelConfig::B(CrnetBConfig {
                    c: kv.parse_or("c", d.c)?,
                    n0: kv.parse_or("n0", d.n0)?,
                    m0: kv.parse_or("m0", d.m0)?,
                    s: kv.parse_or("s", d.s)?,
                    k: kv.parse_or("k", d.k)?,
                    scales,
                })
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KvMap) {
        kv.set("model", self.kind());
        match self {
            ModelConfig::A(a) => {
                kv.set("c", a.c);
                kv.set("n0", a.n0);
                kv.set("m0", a.m0);
                kv.set("s", a.s);
                kv.set("k", a.k);
                kv.set("residual", a.residual);
            }
            ModelConfig::B(b) => {
                kv.set("c", b.c);
                kv.set("n0", b.n0);
                kv.set("m0", b.m0);
                kv.set("s", b.s);
                kv.set("k", b.k);
                kv.set("scales", join_list(&b.scales));
            }
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        self.write_kv(&mut kv);
        kv
    }
}
