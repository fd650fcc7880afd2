use std::collections::{BTreeMap, HashMap};

pub const UNK_TOKEN: &str = "<unk>";
pub const MASK_TOKEN: &str = "<mask>";

/// Token ↔ id map. Ids 0 and 1 are `<unk>` and `<mask>`; corpus tokens follow
/// in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub const UNK_ID: usize = 0;
    pub const MASK_ID: usize = 1;

    /// Keeps the `cap - 2` most frequent tokens (ties broken lexicographically);
    /// anything else maps to `<unk>`.
    pub fn build<'a>(tokens: impl Iterator<Item = &'a String>, cap: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let room = cap.saturating_sub(2);
        let mut kept: Vec<&str> = if counts.len() > room {
            let mut by_freq: Vec<(&str, usize)> = counts.into_iter().collect();
            by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            by_freq.truncate(room);
            log::warn!("vocabulary capped at {cap}; rarer tokens map to {UNK_TOKEN}");
            by_freq.into_iter().map(|(t, _)| t).collect()
        } else {
            counts.into_keys().collect()
        };
        kept.sort_unstable();
        let mut all = vec![UNK_TOKEN.to_string(), MASK_TOKEN.to_string()];
        all.extend(kept.into_iter().map(str::to_string));
        let ids = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens: all, ids }
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, ids }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}
