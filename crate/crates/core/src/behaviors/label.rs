use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A behaviour name plus its canonical token form, used for identity and retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntentLabel {
    canonical: String,
    display: String,
}

/// Lowercases, treats `-`, `_` and `/` as separators, strips other punctuation and sorts
/// the remaining whitespace-separated tokens.
pub fn canonicalize(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .map(|c| if matches!(c, '-' | '_' | '/') { ' ' } else { c })
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    let mut tokens: Vec<&str> = cleaned.split_whitespace().collect();
    tokens.sort_unstable();
    tokens.join(" ")
}

impl IntentLabel {
    /// `None` when the text has no alphanumeric content.
    pub fn new(display: &str) -> Option<Self> {
        let canonical = canonicalize(display);
        if canonical.is_empty() {
            return None;
        }
        Some(Self { canonical, display: display.split_whitespace().collect::<Vec<_>>().join(" ") })
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn display(&self) -> &str {
        &self.display
    }

    pub fn tokens(&self) -> BTreeSet<&str> {
        self.canonical.split(' ').collect()
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display)
    }
}

impl Serialize for IntentLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.display)
    }
}

impl<'de> Deserialize<'de> for IntentLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        IntentLabel::new(&text).ok_or_else(|| serde::de::Error::custom(format!("label `{text}` has no tokens")))
    }
}

/// Jaccard similarity of the canonical token sets.
pub fn similarity(a: &IntentLabel, b: &IntentLabel) -> f64 {
    let (ta, tb) = (a.tokens(), b.tokens());
    let inter = ta.intersection(&tb).count();
    let union = ta.union(&tb).count();
    inter as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> IntentLabel {
        IntentLabel::new(s).unwrap()
    }

    #[test]
    fn canonical_form() {
        assert_eq!(l("Aggressive Cut-in").canonical(), "aggressive cut in");
        assert_eq!(l("  cut in,  AGGRESSIVE! ").canonical(), "aggressive cut in");
        assert_eq!(l("Intersection Rush-through Turn Left").canonical(), "intersection left rush through turn");
        assert!(IntentLabel::new("?!").is_none());
    }

    #[test]
    fn similarity_values() {
        assert_eq!(similarity(&l("Emergency Braking"), &l("braking emergency")), 1.0);
        let s = similarity(&l("Intersection Rush-through Go-straight"), &l("Intersection Rush-through Turn Left"));
        assert!((s - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(similarity(&l("Emergency Braking"), &l("Lane Shift")), 0.0);
    }

    #[test]
    fn serde_uses_display() {
        let j = serde_json::to_string(&l("Close Car-following")).unwrap();
        assert_eq!(j, "\"Close Car-following\"");
        let back: IntentLabel = serde_json::from_str(&j).unwrap();
        assert_eq!(back.canonical(), "car close following");
    }
}
