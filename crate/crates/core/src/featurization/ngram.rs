use serde::{Deserialize, Serialize};

use super::FeatureError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NGramMode {
    /// One window of exactly `n` tokens.
    Single,
    /// Every window size from 1 to `n`.
    Multiple,
}

impl std::str::FromStr for NGramMode {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(NGramMode::Single),
            "multiple" | "multi" => Ok(NGramMode::Multiple),
            other => Err(FeatureError::InvalidConfig(format!("unknown n-gram mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for NGramMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NGramMode::Single => "single",
            NGramMode::Multiple => "multiple",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NGramConfig {
    pub mode: NGramMode,
    pub n: usize,
}

impl NGramConfig {
    pub fn single(n: usize) -> Self {
        Self { mode: NGramMode::Single, n }
    }

    pub fn multiple(max_n: usize) -> Self {
        Self {
            mode: NGramMode::Multiple,
            n: max_n,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.n == 0 {
            return Err(FeatureError::InvalidConfig("n-gram size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn words<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        match self.mode {
            NGramMode::Single => words_gen_single(tokens, self.n),
            NGramMode::Multiple => words_gen_multiple(tokens, self.n),
        }
    }
}

fn join(window: &[impl AsRef<str>]) -> String {
    let len = window.iter().map(|t| t.as_ref().len() + 1).sum();
    let mut s = String::with_capacity(len);
    for (i, t) in window.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(t.as_ref());
    }
    s
}

/// Every contiguous window of exactly `n` tokens, space-joined, in trace
/// order. Empty when the trace is shorter than `n` (or `n` is 0).
pub fn words_gen_single<S: AsRef<str>>(tokens: &[S], n: usize) -> Vec<String> {
    if n == 0 {
        return Vec::new();
    }
    tokens.windows(n).map(join).collect()
}

/// All windows of sizes `1..=max_n`, grouped by size.
pub fn words_gen_multiple<S: AsRef<str>>(tokens: &[S], max_n: usize) -> Vec<String> {
    (1..=max_n).flat_map(|n| words_gen_single(tokens, n)).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn single_examples() {
        let t = toks(&["6", "6", "63"]);
        assert_eq!(words_gen_single(&t, 2), vec!["6 6", "6 63"]);
        assert!(words_gen_single(&t, 6).is_empty());
        let long: Vec<String> = (0..20).map(|i| i.to_string()).collect();
        let w = words_gen_single(&long, 6);
        assert_eq!(w.len(), 20 - 5);
        assert_eq!(w[0], "0 1 2 3 4 5");
        assert_eq!(w.last().unwrap(), "14 15 16 17 18 19");
    }

    #[test]
    fn multiple_examples() {
        let t = toks(&["6", "6", "63"]);
        assert_eq!(words_gen_multiple(&t, 2), vec!["6", "6", "63", "6 6", "6 63"]);
        let ten: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        assert_eq!(words_gen_multiple(&ten, 6).len(), 45);
    }

    #[test]
    fn separator_avoids_concatenation_collisions() {
        let a = words_gen_multiple(&toks(&["6", "63"]), 2);
        let b = words_gen_multiple(&toks(&["66", "3"]), 2);
        assert_ne!(a[2], b[2]);
    }

    #[test]
    fn config_validation_and_parse() {
        assert!(NGramConfig::single(0).validate().is_err());
        assert!(NGramConfig::multiple(3).validate().is_ok());
        assert_eq!("multiple".parse::<NGramMode>().unwrap(), NGramMode::Multiple);
        assert!("bogus".parse::<NGramMode>().is_err());
    }

    proptest! {
        #[test]
        fn multiple_with_one_equals_single_with_one(t in prop::collection::vec("[0-9]{1,3}", 0..30)) {
            prop_assert_eq!(words_gen_multiple(&t, 1), words_gen_single(&t, 1));
        }
    }
}
