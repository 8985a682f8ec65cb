use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Anatomical curve labels attached to mesh vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnatomicalLabel {
    #[serde(rename = "ridge_R")]
    RidgeR,
    #[serde(rename = "ridge_L")]
    RidgeL,
    #[serde(rename = "lig")]
    Lig,
}

impl AnatomicalLabel {
    pub const ALL: [AnatomicalLabel; 3] = [Self::RidgeR, Self::RidgeL, Self::Lig];

    pub fn name(self) -> &'static str {
        match self {
            Self::RidgeR => "ridge_R",
            Self::RidgeL => "ridge_L",
            Self::Lig => "lig",
        }
    }
}

/// Contour channels of a label image set: the three anatomical curves plus
/// the silhouette.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "ridge_R")]
    RidgeR,
    #[serde(rename = "ridge_L")]
    RidgeL,
    #[serde(rename = "lig")]
    Lig,
    #[serde(rename = "sil")]
    Sil,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Self::RidgeR, Self::RidgeL, Self::Lig, Self::Sil];

    pub fn name(self) -> &'static str {
        match self {
            Self::RidgeR => "ridge_R",
            Self::RidgeL => "ridge_L",
            Self::Lig => "lig",
            Self::Sil => "sil",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> Option<AnatomicalLabel> {
        match self {
            Self::RidgeR => Some(AnatomicalLabel::RidgeR),
            Self::RidgeL => Some(AnatomicalLabel::RidgeL),
            Self::Lig => Some(AnatomicalLabel::Lig),
            Self::Sil => None,
        }
    }
}

impl From<AnatomicalLabel> for Channel {
    fn from(l: AnatomicalLabel) -> Self {
        match l {
            AnatomicalLabel::RidgeR => Channel::RidgeR,
            AnatomicalLabel::RidgeL => Channel::RidgeL,
            AnatomicalLabel::Lig => Channel::Lig,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for AnatomicalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnatomicalLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown label `{s}`"))
    }
}
