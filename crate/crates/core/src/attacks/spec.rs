use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F16,
    I8,
}

/// One attack setting, written as a colon-separated string:
///
/// - `finetune[:epochs[:lr]]` (defaults 30 epochs, lr 0.01)
/// - `prune:<rate>:<bn|no_bn>`
/// - `quantize:<f32|f16|i8>`
/// - `overwrite`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AttackSpec {
    FineTune { epochs: usize, lr: f32 },
    Prune { rate: f64, include_bn: bool },
    Quantize(Precision),
    Overwrite,
}

pub const ATTACK_NAMES: &str = "finetune[:epochs[:lr]], prune:<rate>:<bn|no_bn>, quantize:<f32|f16|i8>, overwrite";

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::FineTune { .. } => "finetune",
            AttackSpec::Prune { .. } => "prune",
            AttackSpec::Quantize(_) => "quantize",
            AttackSpec::Overwrite => "overwrite",
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackSpec::FineTune { epochs, lr } => write!(f, "finetune:{epochs}:{lr}"),
            AttackSpec::Prune { rate, include_bn } => {
                write!(f, "prune:{rate}:{}", if *include_bn { "bn" } else { "no_bn" })
            }
            AttackSpec::Quantize(p) => write!(
                f,
                "quantize:{}",
                match p {
                    Precision::F32 => "f32",
                    Precision::F16 => "f16",
                    Precision::I8 => "i8",
                }
            ),
            AttackSpec::Overwrite => write!(f, "overwrite"),
        }
    }
}

impl FromStr for AttackSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = |why: &str| Error::InvalidArgument(format!("attack {s:?}: {why}; valid forms: {ATTACK_NAMES}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts[..] {
            ["finetune"] => Ok(AttackSpec::FineTune { epochs: 30, lr: 0.01 }),
            ["finetune", e] => Ok(AttackSpec::FineTune {
                epochs: e.parse().map_err(|_| bad("bad epoch count"))?,
                lr: 0.01,
            }),
            ["finetune", e, lr] => {
                let lr: f32 = lr.parse().map_err(|_| bad("bad learning rate"))?;
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(bad("learning rate must be > 0"));
                }
                Ok(AttackSpec::FineTune {
                    epochs: e.parse().map_err(|_| bad("bad epoch count"))?,
                    lr,
                })
            }
            ["prune", rate, mode] => {
                let rate: f64 = rate.parse().map_err(|_| bad("bad rate"))?;
                if !(0.0..1.0).contains(&rate) {
                    return Err(bad("rate must lie in [0, 1)"));
                }
                let include_bn = match mode {
                    "bn" => true,
                    "no_bn" => false,
                    _ => return Err(bad("mode must be bn or no_bn")),
                };
                Ok(AttackSpec::Prune { rate, include_bn })
            }
            ["quantize", p] => Ok(AttackSpec::Quantize(match p {
                "f32" => Precision::F32,
                "f16" => Precision::F16,
                "i8" => Precision::I8,
                _ => return Err(bad("precision must be f32, f16 or i8")),
            })),
            ["overwrite"] => Ok(AttackSpec::Overwrite),
            _ => Err(bad("unknown attack")),
        }
    }
}

impl TryFrom<String> for AttackSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<AttackSpec> for String {
    fn from(a: AttackSpec) -> String {
        a.to_string()
    }
}
