use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which embedding channels feed the word-level convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cnn,
    CnnChar,
    CnnCharPos,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Cnn, Variant::CnnChar, Variant::CnnCharPos];

    pub fn uses_chars(self) -> bool {
        self != Variant::Cnn
    }

    pub fn uses_pos(self) -> bool {
        self == Variant::CnnCharPos
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cnn => "cnn",
            Variant::CnnChar => "cnn_char",
            Variant::CnnCharPos => "cnn_char_pos",
        }
    }

    /// Column label used in evaluation reports.
    pub fn report_name(self) -> &'static str {
        match self {
            Variant::Cnn => "CNN",
            Variant::CnnChar => "CNN_char",
            Variant::CnnCharPos => "CNN_char_pos",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown architecture {s:?} (expected cnn, cnn_char or cnn_char_pos)"
                ))
            })
    }
}

/// How `word_filters` is distributed over `word_filter_widths`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterSplit {
    /// `word_filters` filters for every width.
    PerWidth,
    /// `word_filters` in total, split as evenly as possible.
    Total,
}

impl FromStr for FilterSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per_width" => Ok(FilterSplit::PerWidth),
            "total" => Ok(FilterSplit::Total),
            _ => Err(Error::InvalidArgument(format!(
                "unknown filter split {s:?} (expected per_width or total)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::InvalidArgument(format!(
                "unknown optimizer {s:?} (expected adam or sgd)"
            ))),
        }
    }
}

/// Architecture and optimization settings of one CNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub variant: Variant,
    pub word_dim: usize,
    pub char_dim: usize,
    pub pos_dim: usize,
    pub char_filters: usize,
    pub char_filter_width: usize,
    pub word_filter_widths: Vec<usize>,
    pub word_filters: usize,
    pub filter_split: FilterSplit,
    pub dense_units: usize,
    pub dropout: f64,
    pub l2: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub freeze_word_embeddings: bool,
    pub init_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::reference(Variant::CnnCharPos)
    }
}

impl ArchConfig {
    /// Full-size reference setting.
    pub fn reference(variant: Variant) -> Self {
        ArchConfig {
            variant,
            word_dim: 200,
            char_dim: 50,
            pos_dim: 10,
            char_filters: 50,
            char_filter_width: 3,
            word_filter_widths: vec![1, 2, 3],
            word_filters: 2048,
            filter_split: FilterSplit::PerWidth,
            dense_units: 256,
            dropout: 0.2,
            l2: 1e-5,
            lr: 1e-3,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            freeze_word_embeddings: false,
            init_scale: 0.05,
        }
    }

    /// Scaled-down setting that trains in seconds on one core.
    pub fn desk(variant: Variant) -> Self {
        ArchConfig {
            word_dim: 32,
            char_dim: 16,
            pos_dim: 8,
            char_filters: 16,
            word_filters: 32,
            dense_units: 32,
            batch_size: 16,
            lr: 3e-3,
            ..Self::reference(variant)
        }
    }

    /// Smallest setting, used for finite-difference checks.
    pub fn tiny(variant: Variant) -> Self {
        ArchConfig {
            word_dim: 8,
            char_dim: 4,
            pos_dim: 3,
            char_filters: 4,
            word_filters: 4,
            dense_units: 8,
            batch_size: 4,
            ..Self::reference(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("pos_dim", self.pos_dim),
            ("char_filters", self.char_filters),
            ("char_filter_width", self.char_filter_width),
            ("word_filters", self.word_filters),
            ("dense_units", self.dense_units),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.word_filter_widths.is_empty()
            || self.word_filter_widths.contains(&0)
            || !self.word_filter_widths.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::InvalidArgument(format!(
                "word_filter_widths must be positive and strictly ascending, got {:?}",
                self.word_filter_widths
            )));
        }
        if self.filter_split == FilterSplit::Total && self.word_filters < self.word_filter_widths.len() {
            return Err(Error::InvalidArgument(format!(
                "{} filters cannot cover {} widths",
                self.word_filters,
                self.word_filter_widths.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for (name, v) in [("l2", self.l2), ("lr", self.lr), ("init_scale", self.init_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Filter count for each word-level width, in width order.
    pub fn filters_per_width(&self) -> Vec<usize> {
        let k = self.word_filter_widths.len();
        match self.filter_split {
            FilterSplit::PerWidth => vec![self.word_filters; k],
            FilterSplit::Total => (0..k)
                .map(|i| self.word_filters / k + usize::from(i < self.word_filters % k))
                .collect(),
        }
    }

    /// Per-token width after concatenating the active embedding channels.
    pub fn fused_width(&self) -> usize {
        self.word_dim
            + if self.variant.uses_chars() { self.char_filters } else { 0 }
            + if self.variant.uses_pos() { self.pos_dim } else { 0 }
    }

    /// Length of the pooled document vector.
    pub fn pooled_width(&self) -> usize {
        self.filters_per_width().iter().sum()
    }

    /// Everything that determines tensor shapes, as a comparable string.
    pub fn signature(&self) -> String {
        format!(
            "{} word={} char={}x{}/w{} pos={} widths={:?} filters={:?} dense={}",
            self.variant,
            self.word_dim,
            self.char_dim,
            self.char_filters,
            self.char_filter_width,
            self.pos_dim,
            self.word_filter_widths,
            self.filters_per_width(),
            self.dense_units
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_widths() {
        let a = ArchConfig::reference(Variant::CnnCharPos);
        assert_eq!(a.fused_width(), 260);
        assert_eq!(a.pooled_width(), 6144);
        assert_eq!(ArchConfig::reference(Variant::Cnn).fused_width(), 200);
        assert_eq!(ArchConfig::reference(Variant::CnnChar).fused_width(), 250);
        let total = ArchConfig {
            filter_split: FilterSplit::Total,
            ..a
        };
        assert_eq!(total.filters_per_width(), [683, 683, 682]);
        assert_eq!(total.pooled_width(), 2048);
    }

    #[test]
    fn validation() {
        assert!(ArchConfig::default().validate().is_ok());
        let bad = ArchConfig {
            word_filter_widths: vec![2, 1],
            ..ArchConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ArchConfig {
            dropout: 1.0,
            ..ArchConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parse_variant() {
        assert_eq!("CNN_char_pos".parse::<Variant>().unwrap(), Variant::CnnCharPos);
        assert!("rnn".parse::<Variant>().is_err());
    }
}
