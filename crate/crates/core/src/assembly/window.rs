//! Dynamic windows for inputs longer than the encoder limit.
//!
//! The context is cut into overlapping windows of at most `d1` tokens
//! (stride `d1 / 2`). Each window carries the prompts of the events whose
//! trigger region it fully contains; when window plus prompts would exceed
//! the limit the prompts are packed into segments of at most `d2` tokens.
//! Every (window, segment) pair is one encoder pass. Pass outputs are merged
//! back to global positions by averaging over segments within a window and
//! then over windows.

use std::ops::Range;

use super::{AssembledInput, Regions};
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    /// Assembled positions of the context slice.
    pub context: Range<usize>,
    /// Indices into `AssembledInput::events`.
    pub events: Vec<usize>,
    /// Prompt indices per segment.
    pub segments: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pass {
    pub window: usize,
    pub segment: usize,
    /// Global position of every local position, ascending.
    pub positions: Vec<usize>,
    /// Regions in local coordinates.
    pub regions: Regions,
}

impl Pass {
    pub fn local(&self, global: usize) -> Option<usize> {
        self.positions.binary_search(&global).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeEntry {
    pub pass: usize,
    pub local: usize,
    pub global: usize,
    pub weight: f64,
}

/// One weighted contribution of a pass cell to a merged attention cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellEntry {
    pub pass: usize,
    pub local_row: usize,
    pub local_col: usize,
    pub out_row: usize,
    pub global_col: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub total_len: usize,
    pub windows: Vec<Window>,
    pub passes: Vec<Pass>,
}

impl WindowPlan {
    /// A single pass over the whole input.
    pub fn is_identity(&self) -> bool {
        self.passes.len() == 1 && self.passes[0].positions.len() == self.total_len
    }

    /// Per-position averaging weights: segments within a window first, then windows.
    pub fn row_merge(&self) -> Vec<MergeEntry> {
        let n = self.total_len;
        let mut seg_count = vec![vec![0usize; n]; self.windows.len()];
        for pass in &self.passes {
            for &g in &pass.positions {
                seg_count[pass.window][g] += 1;
            }
        }
        let win_count: Vec<usize> = (0..n)
            .map(|g| seg_count.iter().filter(|c| c[g] > 0).count())
            .collect();
        let mut entries = Vec::new();
        for (p, pass) in self.passes.iter().enumerate() {
            for (local, &g) in pass.positions.iter().enumerate() {
                let w = (win_count[g] * seg_count[pass.window][g]) as f64;
                entries.push(MergeEntry {
                    pass: p,
                    local,
                    global: g,
                    weight: 1.0 / w,
                });
            }
        }
        entries
    }

    /// Weights that merge selected rows of square per-pass matrices into a
    /// `rows.len() x total_len` matrix; a cell averages over the passes that
    /// contain both its row and column position.
    pub fn cell_merge(&self, rows: &[usize]) -> Vec<CellEntry> {
        let n = self.total_len;
        let mut entries = Vec::new();
        for (out_row, &r) in rows.iter().enumerate() {
            let mut seg_count = vec![vec![0usize; n]; self.windows.len()];
            for pass in self.passes.iter().filter(|p| p.local(r).is_some()) {
                for &c in &pass.positions {
                    seg_count[pass.window][c] += 1;
                }
            }
            let win_count: Vec<usize> = (0..n)
                .map(|c| seg_count.iter().filter(|s| s[c] > 0).count())
                .collect();
            for (p, pass) in self.passes.iter().enumerate() {
                let Some(local_row) = pass.local(r) else { continue };
                for (local_col, &c) in pass.positions.iter().enumerate() {
                    let w = (win_count[c] * seg_count[pass.window][c]) as f64;
                    entries.push(CellEntry {
                        pass: p,
                        local_row,
                        local_col,
                        out_row,
                        global_col: c,
                        weight: 1.0 / w,
                    });
                }
            }
        }
        entries
    }
}

/// Splits an assembled input into encoder passes.
///
/// `max_len` bounds the tokens after the leading `<s>` anchor, so every pass
/// has at most `max_len + 1` positions.
pub fn plan_windows(inp: &AssembledInput, d1: usize, d2: usize, max_len: usize) -> Result<WindowPlan> {
    if d1 == 0 || d2 == 0 || d1 + d2 > max_len {
        return Err(Error::WindowSizes(format!(
            "need d1, d2 > 0 and d1 + d2 <= max_len, got d1={d1} d2={d2} max_len={max_len}"
        )));
    }
    let total_len = inp.len();
    if total_len <= max_len + 1 {
        let window = Window {
            context: inp.context.clone(),
            events: (0..inp.events.len()).collect(),
            segments: vec![(0..inp.prompts.len()).collect()],
        };
        let pass = Pass {
            window: 0,
            segment: 0,
            positions: (0..total_len).collect(),
            regions: inp.regions(),
        };
        return Ok(WindowPlan {
            total_len,
            windows: vec![window],
            passes: vec![pass],
        });
    }

    let ctx = inp.context.clone();
    let n = ctx.len();
    let stride = (d1 / 2).max(1);
    let mut windows = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + d1).min(n);
        let context = ctx.start + start..ctx.start + end;
        let events: Vec<usize> = inp
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| context.start <= e.trigger.start && e.trigger.end <= context.end)
            .map(|(i, _)| i)
            .collect();
        let mut prompts: Vec<usize> = events.iter().map(|&e| inp.events[e].prompt).collect();
        prompts.sort_unstable();
        prompts.dedup();
        let prompt_len: usize = prompts.iter().map(|&p| inp.prompts[p].range.len()).sum();
        let segments = if context.len() + prompt_len > max_len {
            pack_segments(inp, &prompts, d2)?
        } else {
            vec![prompts]
        };
        windows.push(Window {
            context,
            events,
            segments,
        });
        if end == n {
            break;
        }
        start += stride;
    }
    for (i, e) in inp.events.iter().enumerate() {
        if !windows.iter().any(|w| w.events.contains(&i)) {
            return Err(Error::WindowSizes(format!(
                "trigger region of `{}` ({} tokens) does not fit inside any window",
                e.event_id,
                e.trigger.len()
            )));
        }
    }

    let mut passes = Vec::new();
    for (wi, window) in windows.iter().enumerate() {
        for (si, segment) in window.segments.iter().enumerate() {
            let mut positions = vec![0];
            positions.extend(window.context.clone());
            let mut prompts = Vec::with_capacity(segment.len());
            for &p in segment {
                let local_start = positions.len();
                positions.extend(inp.prompts[p].range.clone());
                prompts.push(local_start..positions.len());
            }
            let shift = |g: usize| g - window.context.start + 1;
            let regions = Regions {
                len: positions.len(),
                triggers: window
                    .events
                    .iter()
                    .map(|&e| shift(inp.events[e].trigger.start)..shift(inp.events[e].trigger.end))
                    .collect(),
                prompts,
                event_prompt: window
                    .events
                    .iter()
                    .map(|&e| segment.iter().position(|&p| p == inp.events[e].prompt))
                    .collect(),
            };
            passes.push(Pass {
                window: wi,
                segment: si,
                positions,
                regions,
            });
        }
    }
    Ok(WindowPlan {
        total_len,
        windows,
        passes,
    })
}

fn pack_segments(inp: &AssembledInput, prompts: &[usize], d2: usize) -> Result<Vec<Vec<usize>>> {
    let mut segments: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for &p in prompts {
        let len = inp.prompts[p].range.len();
        if len > d2 {
            return Err(Error::WindowSizes(format!(
                "prompt for `{}` has {len} tokens, more than d2={d2}",
                inp.prompts[p].event_type
            )));
        }
        if used + len > d2 {
            segments.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(p);
        used += len;
    }
    segments.push(current);
    Ok(segments)
}

/// Merges one representation matrix per pass into the global sequence.
pub fn merge_windows(mats: &[Tensor], plan: &WindowPlan) -> Result<Tensor> {
    if mats.len() != plan.passes.len() {
        return Err(Error::Shape(format!(
            "{} matrices for {} passes",
            mats.len(),
            plan.passes.len()
        )));
    }
    let cols = mats.first().map_or(0, Tensor::cols);
    for (m, pass) in mats.iter().zip(&plan.passes) {
        if m.rows() != pass.positions.len() || m.cols() != cols {
            return Err(Error::Shape(format!(
                "pass matrix {}x{} does not match {} positions x {cols}",
                m.rows(),
                m.cols(),
                pass.positions.len()
            )));
        }
    }
    if plan.is_identity() {
        return Ok(mats[0].clone());
    }
    let mut out = Tensor::zeros(plan.total_len, cols);
    for e in plan.row_merge() {
        let src = mats[e.pass].row(e.local);
        for (o, &v) in out.row_mut(e.global).iter_mut().zip(src) {
            *o += e.weight * v;
        }
    }
    Ok(out)
}
