use serde::{Deserialize, Serialize};

/// The two sentiment capsules. `Pos` is index 0, `Neg` is index 1 in every
/// per-sentiment array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Pos,
    Neg,
}

impl Sentiment {
    pub const BOTH: [Sentiment; 2] = [Sentiment::Pos, Sentiment::Neg];

    pub fn index(self) -> usize {
        match self {
            Sentiment::Pos => 0,
            Sentiment::Neg => 1,
        }
    }

    pub fn opposite(self) -> Sentiment {
        match self {
            Sentiment::Pos => Sentiment::Neg,
            Sentiment::Neg => Sentiment::Pos,
        }
    }

    /// `Pos` iff `rating > threshold` (strict).
    pub fn from_rating(rating: f64, threshold: f64) -> Sentiment {
        if rating > threshold {
            Sentiment::Pos
        } else {
            Sentiment::Neg
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Pos => "pos",
            Sentiment::Neg => "neg",
        }
    }
}

impl std::str::FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pos" => Ok(Sentiment::Pos),
            "neg" => Ok(Sentiment::Neg),
            other => Err(format!("unknown sentiment `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_use_strict_threshold() {
        assert_eq!(Sentiment::from_rating(5.0, 3.0), Sentiment::Pos);
        assert_eq!(Sentiment::from_rating(3.0, 3.0), Sentiment::Neg);
        assert_eq!(Sentiment::from_rating(3.5, 3.0), Sentiment::Pos);
    }
}
