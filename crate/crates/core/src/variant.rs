//! Variant descriptors: which graph-injection mechanism a model uses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::at::{AtKind, KernelSpec, DEFAULT_DIFFUSION_BETA, DEFAULT_MASK_HOPS};
use crate::error::{ModelError, Result};
use crate::ga::{GaPattern, GnnKind};
use crate::pe::PeKind;

pub const DEFAULT_PE_SIZE: usize = 4;

/// One mechanism, written as `vanilla`, `ga:<pattern>[:<gnn>]`,
/// `pe:<kind>[:<size>]` or `at:<kind>[:<args>]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Vanilla,
    Ga { pattern: GaPattern, gnn: GnnKind },
    Pe { kind: PeKind, size: usize },
    At(AtKind),
}

impl Variant {
    /// The variants every property suite covers.
    pub fn core_set() -> Vec<Variant> {
        let mut v = vec![Variant::Vanilla];
        for pattern in [GaPattern::Before, GaPattern::Alternate, GaPattern::Parallel] {
            v.push(Variant::Ga { pattern, gnn: GnnKind::Gcn });
        }
        v.push(Variant::Pe { kind: PeKind::Degree, size: 0 });
        v.push(Variant::Pe { kind: PeKind::Eig, size: DEFAULT_PE_SIZE });
        v.push(Variant::Pe { kind: PeKind::Svd, size: DEFAULT_PE_SIZE });
        v.push(Variant::At(AtKind::Mask1));
        v.push(Variant::At(AtKind::MaskN { hops: DEFAULT_MASK_HOPS }));
        v.push(Variant::At(AtKind::Spb));
        v.push(Variant::At(AtKind::Pma));
        v.push(Variant::At(AtKind::Kernel {
            kernel: KernelSpec::Diffusion { beta: DEFAULT_DIFFUSION_BETA },
        }));
        v
    }

    pub fn family(&self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Ga { .. } => "ga",
            Variant::Pe { .. } => "pe",
            Variant::At(_) => "at",
        }
    }

    pub fn needs_edge_features(&self) -> bool {
        matches!(self, Variant::At(k) if k.needs_edge_features())
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Vanilla => f.write_str("vanilla"),
            Variant::Ga { pattern, gnn } => write!(f, "ga:{}:{}", pattern.as_str(), gnn.as_str()),
            Variant::Pe { kind: PeKind::Degree, .. } => f.write_str("pe:degree"),
            Variant::Pe { kind, size } => write!(f, "pe:{}:{size}", kind.as_str()),
            Variant::At(AtKind::MaskN { hops }) => write!(f, "at:mask-n:{hops}"),
            Variant::At(AtKind::Kernel { kernel: KernelSpec::Diffusion { beta } }) => {
                write!(f, "at:kernel:diffusion:{beta}")
            }
            Variant::At(AtKind::Kernel { kernel: KernelSpec::RandomWalk { p } }) => {
                write!(f, "at:kernel:rw:{p}")
            }
            Variant::At(k) => write!(f, "at:{}", k.name()),
        }
    }
}

fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| ModelError::Config(format!("invalid {what} `{s}`")))
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let extra = |n: usize| {
            if parts.len() > n {
                Err(ModelError::Config(format!("unexpected trailing fields in variant `{s}`")))
            } else {
                Ok(())
            }
        };
        let v = match parts[0] {
            "vanilla" => {
                extra(1)?;
                Variant::Vanilla
            }
            "ga" => {
                extra(3)?;
                let pattern = parts
                    .get(1)
                    .ok_or_else(|| ModelError::Config("ga variant needs a pattern".into()))?
                    .parse()?;
                let gnn = parts.get(2).map_or(Ok(GnnKind::Gcn), |g| g.parse())?;
                Variant::Ga { pattern, gnn }
            }
            "pe" => {
                extra(3)?;
                let kind: PeKind = parts
                    .get(1)
                    .ok_or_else(|| ModelError::Config("pe variant needs a kind".into()))?
                    .parse()?;
                let size = match (kind, parts.get(2)) {
                    (PeKind::Degree, None) => 0,
                    (PeKind::Degree, Some(_)) => {
                        return Err(ModelError::Config("degree PE takes no size".into()))
                    }
                    (_, None) => DEFAULT_PE_SIZE,
                    (_, Some(k)) => parse_num(k, "PE size")?,
                };
                if kind != PeKind::Degree && size == 0 {
                    return Err(ModelError::Config("PE size must be positive".into()));
                }
                Variant::Pe { kind, size }
            }
            "at" => {
                let name = parts
                    .get(1)
                    .ok_or_else(|| ModelError::Config("at variant needs a kind".into()))?;
                let kind = match *name {
                    "mask-1" => {
                        extra(2)?;
                        AtKind::Mask1
                    }
                    "mask-n" => {
                        extra(3)?;
                        let hops = parts.get(2).map_or(Ok(DEFAULT_MASK_HOPS), |h| parse_num(h, "hop count"))?;
                        if hops == 0 {
                            return Err(ModelError::Config("mask-n needs at least one hop".into()));
                        }
                        AtKind::MaskN { hops }
                    }
                    "spb" => {
                        extra(2)?;
                        AtKind::Spb
                    }
                    "pma" => {
                        extra(2)?;
                        AtKind::Pma
                    }
                    "kernel" => {
                        extra(4)?;
                        let kernel = match parts.get(2).copied() {
                            None | Some("diffusion") => {
                                let beta = parts
                                    .get(3)
                                    .map_or(Ok(DEFAULT_DIFFUSION_BETA), |b| parse_num(b, "diffusion beta"))?;
                                KernelSpec::Diffusion { beta }
                            }
                            Some("rw") => {
                                let p = parts.get(3).map_or(Ok(2), |p| parse_num(p, "walk length"))?;
                                KernelSpec::RandomWalk { p }
                            }
                            Some(other) => {
                                return Err(ModelError::Config(format!(
                                    "unknown kernel `{other}` (diffusion|rw)"
                                )))
                            }
                        };
                        AtKind::Kernel { kernel }
                    }
                    "edge-mask" => {
                        extra(2)?;
                        AtKind::EdgeMask
                    }
                    "edge-bias" => {
                        extra(2)?;
                        AtKind::EdgeBias
                    }
                    other => {
                        return Err(ModelError::Config(format!(
                            "unknown attention variant `{other}` \
                             (mask-1|mask-n|spb|pma|kernel|edge-mask|edge-bias)"
                        )))
                    }
                };
                Variant::At(kind)
            }
            other => {
                return Err(ModelError::Config(format!(
                    "unknown variant family `{other}` (vanilla|ga|pe|at)"
                )))
            }
        };
        Ok(v)
    }
}

impl TryFrom<String> for Variant {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> Self {
        v.to_string()
    }
}
