use serde::{Deserialize, Serialize};

use crate::blocks::ShiftSpec;
use crate::error::{Error, Result};

/// Network family member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Two-branch convolutional attention network without temporal modelling.
    Can2d,
    /// `Can2d` plus temporal shifts in the motion branch.
    Tscan,
    /// `Tscan` plus efficient channel attention gates.
    Tsdan,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Can2d => "2D-CAN",
            Variant::Tscan => "TS-CAN",
            Variant::Tsdan => "TS-DAN",
        }
    }

    pub fn shifted(self) -> bool {
        !matches!(self, Variant::Can2d)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "can2d" | "2dcan" => Ok(Variant::Can2d),
            "tscan" => Ok(Variant::Tscan),
            "tsdan" => Ok(Variant::Tsdan),
            other => Err(Error::config("variant", format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Pulse waveform only.
    Hr,
    /// Respiration waveform only.
    Rr,
    /// Both waveforms from a shared trunk with two heads.
    Multitask,
}

impl Task {
    pub fn has_pulse(self) -> bool {
        !matches!(self, Task::Rr)
    }

    pub fn has_resp(self) -> bool {
        !matches!(self, Task::Hr)
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hr" => Ok(Task::Hr),
            "rr" => Ok(Task::Rr),
            "multitask" | "multi" => Ok(Task::Multitask),
            other => Err(Error::config("task", format!("unknown task `{other}`"))),
        }
    }
}

/// Where a channel attention gate sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcaSite {
    /// Appearance features feeding the first attention mask.
    AppearanceMask1,
    /// Appearance features feeding the second attention mask.
    AppearanceMask2,
    /// Masked motion features just before the final pooling.
    MotionFinal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Number of channel attention gates: 0, 1 or 3.
    pub eca_count: u8,
    /// Gate position used when `eca_count == 1`.
    pub eca_single_site: EcaSite,
    pub eca_kernel: usize,
    pub task: Task,
    pub input_hw: usize,
    pub frames_per_clip: usize,
    pub conv_widths: [usize; 2],
    pub kernel: usize,
    pub dense_units: usize,
    /// After the first pooling, after the second pooling, before the heads.
    pub dropout_rates: [f64; 3],
    pub shift: ShiftSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::new(Variant::Tsdan, Task::Multitask)
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, task: Task) -> Self {
        ModelConfig {
            variant,
            eca_count: if variant == Variant::Tsdan { 3 } else { 0 },
            eca_single_site: EcaSite::MotionFinal,
            eca_kernel: 3,
            task,
            input_hw: 72,
            frames_per_clip: 10,
            conv_widths: [32, 64],
            kernel: 3,
            dense_units: 128,
            dropout_rates: [0.25, 0.25, 0.5],
            shift: ShiftSpec::default(),
        }
    }

    /// 12x12 input, two frames, widths `[4, 8]`: small enough for exhaustive
    /// finite-difference checks.
    pub fn miniature(variant: Variant, task: Task) -> Self {
        ModelConfig {
            input_hw: 12,
            frames_per_clip: 2,
            conv_widths: [4, 8],
            dense_units: 6,
            dropout_rates: [0.0; 3],
            ..ModelConfig::new(variant, task)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_hw == 0 || !self.input_hw.is_multiple_of(4) {
            return Err(Error::config(
                "input_hw",
                format!("{} is not a positive multiple of 4", self.input_hw),
            ));
        }
        if self.frames_per_clip == 0 {
            return Err(Error::config("frames_per_clip", "must be >= 1"));
        }
        if self.variant.shifted() && self.frames_per_clip < 2 {
            return Err(Error::config(
                "frames_per_clip",
                "shifted variants need at least 2 frames",
            ));
        }
        match (self.variant, self.eca_count) {
            (Variant::Tsdan, 1 | 3) | (Variant::Can2d | Variant::Tscan, 0) => {}
            (v, n) => {
                return Err(Error::config(
                    "eca_count",
                    format!("{n} gates is not valid for {}", v.label()),
                ))
            }
        }
        if self.eca_kernel.is_multiple_of(2) {
            return Err(Error::config("eca_kernel", "must be odd"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("kernel", "must be odd"));
        }
        if self.conv_widths.contains(&0) {
            return Err(Error::config("conv_widths", "must be positive"));
        }
        if self.dense_units == 0 {
            return Err(Error::config("dense_units", "must be positive"));
        }
        if let Some(r) = self.dropout_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::config("dropout_rates", format!("{r} outside [0, 1)")));
        }
        self.shift.validate()
    }

    pub fn eca_sites(&self) -> Vec<EcaSite> {
        match self.eca_count {
            0 => Vec::new(),
            1 => vec![self.eca_single_site],
            _ => vec![EcaSite::AppearanceMask1, EcaSite::AppearanceMask2, EcaSite::MotionFinal],
        }
    }

    pub fn has_eca(&self, site: EcaSite) -> bool {
        self.eca_sites().contains(&site)
    }

    /// Human-readable label matching the ablation naming, e.g. `TS-DAN(3ECA)`.
    pub fn label(&self) -> String {
        match self.variant {
            Variant::Tsdan => format!("TS-DAN({}ECA)", self.eca_count),
            v => v.label().to_string(),
        }
    }

    /// Spatial extent after both pooling stages.
    pub fn final_hw(&self) -> usize {
        self.input_hw / 4
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_names_failing_field() {
        let mut c = ModelConfig::default();
        c.input_hw = 70;
        assert!(c.validate().unwrap_err().to_string().contains("input_hw"));

        let mut c = ModelConfig::new(Variant::Tscan, Task::Hr);
        c.eca_count = 3;
        assert!(c.validate().unwrap_err().to_string().contains("eca_count"));

        let mut c = ModelConfig::new(Variant::Tsdan, Task::Hr);
        c.eca_count = 0;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::new(Variant::Tscan, Task::Hr);
        c.frames_per_clip = 1;
        assert!(c.validate().unwrap_err().to_string().contains("frames_per_clip"));

        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::miniature(Variant::Tsdan, Task::Multitask)
            .validate()
            .is_ok());
    }

    #[test]
    fn parses_names() {
        assert_eq!("TS-DAN".parse::<Variant>().unwrap(), Variant::Tsdan);
        assert_eq!("2d-can".parse::<Variant>().unwrap(), Variant::Can2d);
        assert_eq!("multitask".parse::<Task>().unwrap(), Task::Multitask);
        assert!("lstm".parse::<Variant>().is_err());
    }
}
