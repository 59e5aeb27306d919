//! Event-type prompt templates with role slots.
//!
//! Template files are JSON objects mapping an event type to a template
//! string in which every role mention is written `«role:Name»`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::Deserializer;

use crate::error::{Error, Result};

const MARKER_OPEN: &str = "«role:";
const MARKER_CLOSE: char = '»';

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateToken {
    pub text: String,
    /// Index into [`Template::slots`] when this token belongs to a slot.
    pub slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub role: String,
    /// Token range inside the template.
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub event_type: String,
    pub tokens: Vec<TemplateToken>,
    pub slots: Vec<Slot>,
}

impl Template {
    pub fn parse(event_type: &str, source: &str) -> Result<Self> {
        let err = |message: &str| Error::Template {
            event_type: event_type.to_string(),
            message: message.to_string(),
        };
        if source.trim().is_empty() {
            return Err(err("empty template"));
        }
        let mut tokens = Vec::new();
        let mut slots = Vec::new();
        let mut rest = source;
        while let Some(open) = rest.find(MARKER_OPEN) {
            push_plain(&mut tokens, &rest[..open]);
            let after = &rest[open + MARKER_OPEN.len()..];
            let close = after
                .find(MARKER_CLOSE)
                .ok_or_else(|| err("unterminated role marker"))?;
            let role = after[..close].split_whitespace().collect::<Vec<_>>();
            if role.is_empty() {
                return Err(err("role marker with empty name"));
            }
            let slot = slots.len();
            let start = tokens.len();
            tokens.extend(role.iter().map(|w| TemplateToken {
                text: (*w).to_string(),
                slot: Some(slot),
            }));
            slots.push(Slot {
                role: role.join(" "),
                range: start..tokens.len(),
            });
            rest = &after[close + MARKER_CLOSE.len_utf8()..];
        }
        push_plain(&mut tokens, rest);
        if slots.is_empty() {
            return Err(err("template has no «role:…» markers"));
        }
        Ok(Template {
            event_type: event_type.to_string(),
            tokens,
            slots,
        })
    }

    pub fn has_role(&self, role: &str) -> bool {
        self.slots.iter().any(|s| s.role == role)
    }

    /// Distinct role names in first-occurrence order.
    pub fn roles(&self) -> Vec<&str> {
        let mut roles: Vec<&str> = Vec::new();
        for slot in &self.slots {
            if !roles.contains(&slot.role.as_str()) {
                roles.push(&slot.role);
            }
        }
        roles
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for Template {
    /// Renders back to the marker syntax accepted by [`Template::parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut i = 0;
        let mut first = true;
        while i < self.tokens.len() {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            match self.tokens[i].slot {
                Some(s) => {
                    write!(f, "{MARKER_OPEN}{}{MARKER_CLOSE}", self.slots[s].role)?;
                    i = self.slots[s].range.end;
                }
                None => {
                    f.write_str(&self.tokens[i].text)?;
                    i += 1;
                }
            }
        }
        Ok(())
    }
}

fn push_plain(tokens: &mut Vec<TemplateToken>, text: &str) {
    tokens.extend(tokenize_text(text).into_iter().map(|text| TemplateToken { text, slot: None }));
}

/// Whitespace split with leading/trailing punctuation peeled into separate tokens.
pub(crate) fn tokenize_text(text: &str) -> Vec<String> {
    let is_punct = |c: char| matches!(c, '.' | ',' | ';' | ':' | '(' | ')' | '!' | '?' | '"');
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut word = word;
        let mut leading = Vec::new();
        while let Some(c) = word.chars().next().filter(|&c| is_punct(c)) {
            leading.push(c.to_string());
            word = &word[c.len_utf8()..];
        }
        let mut trailing = Vec::new();
        while let Some(c) = word.chars().last().filter(|&c| is_punct(c)) {
            trailing.push(c.to_string());
            word = &word[..word.len() - c.len_utf8()];
        }
        out.extend(leading);
        if !word.is_empty() {
            out.push(word.to_string());
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// Tokens used to spell an event type inside the prompt, e.g.
/// `Conflict.Attack` becomes `Conflict Attack`.
pub fn event_type_tokens(event_type: &str) -> Vec<String> {
    event_type
        .split(|c: char| c.is_whitespace() || c == '.')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, Template>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, template: Template) -> Result<()> {
        if self.templates.contains_key(&template.event_type) {
            return Err(Error::DuplicateTemplate(template.event_type));
        }
        self.templates.insert(template.event_type.clone(), template);
        Ok(())
    }

    pub fn get(&self, event_type: &str) -> Option<&Template> {
        self.templates.get(event_type)
    }

    pub fn require(&self, event_type: &str) -> Result<&Template> {
        self.get(event_type)
            .ok_or_else(|| Error::MissingTemplate(event_type.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Template> {
        self.templates.values()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let mut reg = TemplateRegistry::new();
        for (event_type, source) in entries {
            reg.insert(Template::parse(&event_type, &source)?)?;
        }
        Ok(reg)
    }

    pub fn to_json_string(&self) -> String {
        let map: BTreeMap<&str, String> = self
            .templates
            .iter()
            .map(|(k, t)| (k.as_str(), t.to_string()))
            .collect();
        serde_json::to_string_pretty(&map).expect("string map always serializes")
    }
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<TemplateRegistry> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TemplateRegistry::from_json_str(&text)
}

/// Reads the top-level object as an ordered list so duplicate keys survive
/// long enough to be rejected.
fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    struct Entries;
    impl<'de> Visitor<'de> for Entries {
        type Value = Vec<(String, String)>;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("an object mapping event types to template strings")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some(entry) = map.next_entry::<String, String>()? {
                out.push(entry);
            }
            Ok(out)
        }
    }
    let mut de = serde_json::Deserializer::from_str(text);
    let entries = de.deserialize_map(Entries).and_then(|v| de.end().map(|_| v));
    entries.map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}
