use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::assembly::{trigger_close, trigger_open, type_close, type_open, START_TOKEN};
use crate::corpus::template::event_type_tokens;
use crate::corpus::{Corpus, TemplateRegistry};

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Token string to embedding row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Special tokens, marker pairs, every template and event-type token, and
    /// every corpus token, in that order.
    pub fn build(corpus: &Corpus, reg: &TemplateRegistry, max_markers: usize) -> Self {
        let mut tokens = vec![START_TOKEN.to_string(), UNKNOWN_TOKEN.to_string()];
        for i in 0..max_markers {
            tokens.extend([trigger_open(i), trigger_close(i), type_open(i), type_close(i)]);
        }
        let mut words = BTreeSet::new();
        for template in reg.iter() {
            words.extend(event_type_tokens(&template.event_type));
            words.extend(template.tokens.iter().map(|t| t.text.clone()));
        }
        for doc in &corpus.documents {
            words.extend(doc.tokens.iter().cloned());
        }
        let reserved: BTreeSet<String> = tokens.iter().cloned().collect();
        tokens.extend(words.into_iter().filter(|w| !reserved.contains(w)));
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index
            .get(token)
            .or_else(|| self.index.get(UNKNOWN_TOKEN))
            .copied()
            .unwrap_or(0)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_words_map_to_unk() {
        let reg = TemplateRegistry::from_json_str(r#"{"Die": "«role:Victim» died"}"#).unwrap();
        let corpus = Corpus::from_jsonl(r#"{"doc_id":"a","tokens":["x","y"],"events":[]}"#).unwrap();
        let v = Vocab::build(&corpus, &reg, 2);
        assert_eq!(v.id("<s>"), 0);
        assert_eq!(v.id("never-seen"), v.id(UNKNOWN_TOKEN));
        assert_ne!(v.id("died"), v.id(UNKNOWN_TOKEN));
        assert_ne!(v.id("x"), v.id(UNKNOWN_TOKEN));
        assert_ne!(v.id("<t1>"), v.id(UNKNOWN_TOKEN));
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
