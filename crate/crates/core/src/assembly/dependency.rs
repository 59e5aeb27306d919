use std::ops::Range;

use super::AssembledInput;

/// Relation between two sequence positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Dependency {
    None = 0,
    Intra = 1,
    Inter = 2,
}

impl Dependency {
    pub fn name(self) -> &'static str {
        match self {
            Dependency::None => "na",
            Dependency::Intra => "intra",
            Dependency::Inter => "inter",
        }
    }
}

/// Trigger and prompt regions of one encoder pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Regions {
    pub len: usize,
    pub triggers: Vec<Range<usize>>,
    pub prompts: Vec<Range<usize>>,
    /// Prompt serving each trigger's event, if that prompt is present.
    pub event_prompt: Vec<Option<usize>>,
}

/// Dense `len x len` category matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyMatrix {
    len: usize,
    cells: Vec<Dependency>,
}

impl DependencyMatrix {
    pub fn all_none(len: usize) -> Self {
        DependencyMatrix {
            len,
            cells: vec![Dependency::None; len * len],
        }
    }

    pub fn from_regions(regions: &Regions) -> Self {
        let len = regions.len;
        let mut m = Self::all_none(len);
        for (p, pr) in regions.prompts.iter().enumerate() {
            for (q, qr) in regions.prompts.iter().enumerate() {
                let dep = if p == q { Dependency::Intra } else { Dependency::Inter };
                m.fill(pr.clone(), qr.clone(), dep);
            }
        }
        for (t, tr) in regions.triggers.iter().enumerate() {
            for (q, qr) in regions.prompts.iter().enumerate() {
                let dep = if regions.event_prompt[t] == Some(q) {
                    Dependency::Intra
                } else {
                    Dependency::Inter
                };
                m.fill(tr.clone(), qr.clone(), dep);
                m.fill(qr.clone(), tr.clone(), dep);
            }
        }
        m
    }

    fn fill(&mut self, rows: Range<usize>, cols: Range<usize>, dep: Dependency) {
        for i in rows {
            self.cells[i * self.len + cols.start..i * self.len + cols.end].fill(dep);
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize, j: usize) -> Dependency {
        self.cells[i * self.len + j]
    }

    pub fn set(&mut self, i: usize, j: usize, dep: Dependency) {
        self.cells[i * self.len + j] = dep;
    }

    pub fn count(&self, dep: Dependency) -> usize {
        self.cells.iter().filter(|&&c| c == dep).count()
    }

    pub fn has_bias_cells(&self) -> bool {
        self.cells.iter().any(|&c| c != Dependency::None)
    }

    /// Row-major 0/1 mask of the cells in category `dep`.
    pub fn mask(&self, dep: Dependency) -> Vec<f64> {
        self.cells
            .iter()
            .map(|&c| if c == dep { 1.0 } else { 0.0 })
            .collect()
    }
}

pub fn build_dependency_matrix(inp: &AssembledInput) -> DependencyMatrix {
    DependencyMatrix::from_regions(&inp.regions())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, AssemblyConfig};
    use crate::corpus::{Document, Event, Span, TemplateRegistry};

    fn two_event_input(types: (&str, &str)) -> AssembledInput {
        let reg = TemplateRegistry::from_json_str(
            r#"{"A": "«role:X» hit «role:Y» .", "B": "«role:Z» fell"}"#,
        )
        .unwrap();
        let doc = Document {
            doc_id: "d".into(),
            tokens: "p q r s t u".split(' ').map(String::from).collect(),
            events: vec![
                Event {
                    event_id: "e1".into(),
                    event_type: types.0.into(),
                    trigger: Span::new(1, 3),
                    arguments: vec![],
                },
                Event {
                    event_id: "e2".into(),
                    event_type: types.1.into(),
                    trigger: Span::new(4, 5),
                    arguments: vec![],
                },
            ],
        };
        assemble(&doc, &reg, &AssemblyConfig::default()).unwrap()
    }

    /// Category by literal definition, position by position.
    fn oracle(inp: &AssembledInput, i: usize, j: usize) -> Dependency {
        let trig = |p: usize| inp.events.iter().position(|e| e.trigger.contains(&p));
        let prompt = |p: usize| inp.prompts.iter().position(|r| r.range.contains(&p));
        match (trig(i), prompt(i), trig(j), prompt(j)) {
            (_, Some(a), _, Some(b)) => {
                if a == b { Dependency::Intra } else { Dependency::Inter }
            }
            (Some(e), _, _, Some(b)) | (_, Some(b), Some(e), _) => {
                if inp.events[e].prompt == b { Dependency::Intra } else { Dependency::Inter }
            }
            _ => Dependency::None,
        }
    }

    #[test]
    fn two_events_match_enumeration_and_closed_form() {
        let inp = two_event_input(("A", "B"));
        let m = build_dependency_matrix(&inp);
        for i in 0..inp.len() {
            for j in 0..inp.len() {
                assert_eq!(m.get(i, j), oracle(&inp, i, j), "cell ({i},{j})");
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        let t1 = inp.events[0].trigger.len();
        let t2 = inp.events[1].trigger.len();
        let p1 = inp.prompts[0].range.len();
        let p2 = inp.prompts[1].range.len();
        assert_eq!(m.count(Dependency::Inter), 2 * t1 * p2 + 2 * t2 * p1 + 2 * p1 * p2);
        for i in inp.context.clone() {
            for j in inp.context.clone() {
                assert_eq!(m.get(i, j), Dependency::None);
            }
        }
    }

    #[test]
    fn shared_prompt_is_intra_with_both_triggers() {
        let inp = two_event_input(("A", "A"));
        let m = build_dependency_matrix(&inp);
        assert_eq!(m.count(Dependency::Inter), 0);
        let p = inp.prompts[0].range.start;
        for e in &inp.events {
            assert_eq!(m.get(e.marker(), p), Dependency::Intra);
        }
        // trigger to trigger stays NA
        assert_eq!(m.get(inp.events[0].marker(), inp.events[1].marker()), Dependency::None);
    }
}
