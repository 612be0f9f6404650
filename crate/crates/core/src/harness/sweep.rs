use std::str::FromStr;

use super::RunConfig;
use crate::error::{Error, Result};

/// Parameters that `sweep` can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Tau,
    Alpha,
    P,
    Q,
    ResampleCount,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lambda" => SweepParam::Lambda,
            "tau" => SweepParam::Tau,
            "alpha" => SweepParam::Alpha,
            "p" => SweepParam::P,
            "q" => SweepParam::Q,
            "resample_count" | "resample-count" => SweepParam::ResampleCount,
            other => return Err(Error::UnknownParameter(other.to_string())),
        })
    }
}

fn count(param: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidParameter(format!(
            "{param} takes non-negative integers, got {v}"
        )))
    }
}

impl SweepParam {
    /// A copy of `config` with this parameter set to `value`.
    pub fn apply(self, config: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = config.clone();
        match self {
            SweepParam::Lambda => c.fusion.lambda = Some(value),
            SweepParam::Tau => c.tau = value,
            SweepParam::Alpha => c.pvdh.alpha = value,
            SweepParam::P => {
                let mut sel = c.selection_params();
                sel.p = count("p", value)?;
                c.selection = Some(sel);
            }
            SweepParam::Q => {
                let mut sel = c.selection_params();
                sel.q = count("q", value)?;
                c.selection = Some(sel);
            }
            SweepParam::ResampleCount => c.pvdh.resample_count = count("resample_count", value)?,
        }
        Ok(c)
    }
}
