use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Ground-truth class of a synthesized program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "aes")]
    Aes,
    #[serde(rename = "rc4")]
    Rc4,
    #[serde(rename = "blowfish")]
    Blowfish,
    #[serde(rename = "md5")]
    Md5,
    #[serde(rename = "rsa")]
    Rsa,
    #[serde(rename = "rsa+aes")]
    RsaAes,
}

impl ClassLabel {
    /// The six classes in confusion-matrix order.
    pub const ALL: [ClassLabel; 6] = [
        ClassLabel::Aes,
        ClassLabel::Rc4,
        ClassLabel::Blowfish,
        ClassLabel::Md5,
        ClassLabel::Rsa,
        ClassLabel::RsaAes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Aes => "aes",
            ClassLabel::Rc4 => "rc4",
            ClassLabel::Blowfish => "blowfish",
            ClassLabel::Md5 => "md5",
            ClassLabel::Rsa => "rsa",
            ClassLabel::RsaAes => "rsa+aes",
        }
    }

    /// Short column header used when printing confusion matrices.
    pub fn short(self) -> &'static str {
        match self {
            ClassLabel::Aes => "AES",
            ClassLabel::Rc4 => "RC4",
            ClassLabel::Blowfish => "BLF",
            ClassLabel::Md5 => "MD5",
            ClassLabel::Rsa => "RSA",
            ClassLabel::RsaAes => "R/A",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown class label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for ClassLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.name() == lower)
            .or(match lower.as_str() {
                "bf" | "blf" => Some(ClassLabel::Blowfish),
                "r/a" | "rsa_aes" | "rsaaes" => Some(ClassLabel::RsaAes),
                _ => None,
            })
            .ok_or(UnknownLabel(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in ClassLabel::ALL {
            assert_eq!(c.name().parse::<ClassLabel>().unwrap(), c);
        }
        assert!("des".parse::<ClassLabel>().is_err());
    }
}
