//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! straight to stderr so the lines show up even when output is captured.

use std::collections::BTreeSet;
use std::io::Write;
use std::ops::Range;
use std::time::{Duration, Instant};

use deeia::assembly::{
    assemble, build_dependency_matrix, merge_windows, plan_windows, AssembledInput, AssemblyConfig, Dependency,
    DependencyMatrix,
};
use deeia::corpus::{generate_synthetic, Corpus, GenConfig, Span, TemplateRegistry};
use deeia::matching::{assignment_cost, hungarian};
use deeia::model::{best_span, encode, select_span, Model, ModelConfig, Vocab};
use deeia::nn::Tensor;
use deeia::pipeline::{
    bench, bench_documents, classify_error, evaluate, grad_check_config, model_grad_check, predict, predict_corpus,
    train, ErrorCategory, Mode, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: usize, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {id:>2} {:<4} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data.iter().map(|v| v.to_bits()).collect()
}

fn synthetic(docs: usize, seed: u64) -> (Corpus, TemplateRegistry) {
    let gen = GenConfig {
        documents: docs,
        ..GenConfig::default()
    };
    (generate_synthetic(&gen, seed).unwrap(), gen.registry().unwrap())
}

fn randomize_bias(model: &mut Model, rng: &mut ChaCha8Rng) {
    for name in model.bias_param_names() {
        let id = model.params.id(&name).unwrap();
        for v in model.params.get_mut(id).data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
}

fn c1_gradient_fidelity() -> bool {
    let start = Instant::now();
    let r = model_grad_check(&grad_check_config(), 7, usize::MAX).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = r.max_rel_error <= 1e-4 && secs < 60.0;
    report(
        1,
        "gradient check",
        pass,
        &format!(
            "max rel error {:.3e} over {} coordinates (worst {}), {secs:.1}s",
            r.max_rel_error, r.checked, r.worst_param
        ),
    );
    pass
}

fn c2_vanilla_equivalence() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (corpus, reg) = synthetic(10, 2);
    let mut equal = 0;
    let mut total = 0;
    let mut bias_active = true;
    for (i, doc) in corpus.documents.iter().enumerate() {
        let config = ModelConfig {
            dim: 16,
            heads: 4,
            ffn_dim: 24,
            gamma: 0.5,
            per_layer_bias: i % 2 == 1,
            ..ModelConfig::default()
        };
        let vocab = Vocab::build(&corpus, &reg, config.max_markers);
        let mut model = Model::new(config, vocab, i as u64).unwrap();
        randomize_bias(&mut model, &mut rng);
        let inp = assemble(doc, &reg, &model.config.assembly()).unwrap();
        let dep = build_dependency_matrix(&inp);
        let none = DependencyMatrix::all_none(inp.len());

        let mut plain = model.clone();
        plain.config.gamma = 0.0;
        let reference = bits(&encode(&plain, &inp, &none).unwrap().h_en);

        let zero_gamma = bits(&encode(&plain, &inp, &dep).unwrap().h_en);
        let all_na = bits(&encode(&model, &inp, &none).unwrap().h_en);
        total += 2;
        equal += usize::from(zero_gamma == reference) + usize::from(all_na == reference);
        bias_active &= bits(&encode(&model, &inp, &dep).unwrap().h_en) != reference;
    }
    let pass = equal == total && bias_active;
    report(
        2,
        "vanilla-attention equivalence",
        pass,
        &format!("{equal}/{total} degenerate encodings bitwise identical; active bias changes output: {bias_active}"),
    );
    pass
}

/// Minimum total cost over all injective row-to-column (or column-to-row)
/// assignments, summed in row order.
fn exhaustive_min(cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (cost.len(), cost[0].len());
    let mut best = f64::INFINITY;
    if n <= m {
        let mut cols: Vec<usize> = (0..m).collect();
        permute(&mut cols, 0, &mut |p| {
            let s = (0..n).fold(0.0, |acc, r| acc + cost[r][p[r]]);
            best = best.min(s);
        });
    } else {
        let mut rows: Vec<usize> = (0..n).collect();
        permute(&mut rows, 0, &mut |p| {
            // rows p[0..m] take columns 0..m; sum in row order
            let mut pairs: Vec<(usize, usize)> = (0..m).map(|c| (p[c], c)).collect();
            pairs.sort_unstable();
            let s = pairs.iter().fold(0.0, |acc, &(r, c)| acc + cost[r][c]);
            best = best.min(s);
        });
    }
    best
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

fn c3_hungarian() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = 0;
    for case in 0..200 {
        let (n, m) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        if case % 2 == 0 {
                            rng.random_range(0..6) as f64
                        } else {
                            rng.random_range(0.0..10.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let pairs = hungarian(&cost).unwrap();
        let rows: BTreeSet<_> = pairs.iter().map(|p| p.0).collect();
        let cols: BTreeSet<_> = pairs.iter().map(|p| p.1).collect();
        let valid = pairs.len() == n.min(m) && rows.len() == pairs.len() && cols.len() == pairs.len();
        if valid && assignment_cost(&cost, &pairs) == exhaustive_min(&cost) {
            exact += 1;
        }
    }
    let pass = exact == 200;
    report(3, "Hungarian vs exhaustive", pass, &format!("{exact}/200 exact minimum"));
    pass
}

fn softmax_masked(logits: &[f64], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let max = (0..logits.len()).filter(|&i| keep(i)).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = (0..logits.len())
        .map(|i| if keep(i) { (logits[i] - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Best candidate by enumeration: null span plus every context span of
/// length at most `l`, ties broken by smallest start then end.
fn brute_force_span(start: &[f64], end: &[f64], ctx: Range<usize>, l: usize) -> Span {
    let mut cands = vec![(0, 0)];
    for m in ctx.clone() {
        for n in m + 1..=ctx.end {
            if n - m <= l {
                cands.push((m, n));
            }
        }
    }
    let score = |&(m, n): &(usize, usize)| if n == 0 { start[0] + end[0] } else { start[m] + end[n - 1] };
    let best = cands.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
    let (m, n) = *cands.iter().filter(|c| score(c) == best).min().unwrap();
    Span::new(m, n)
}

fn c4_span_selection() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut agree = 0;
    let mut nulls = 0;
    for case in 0..200 {
        let len = rng.random_range(2..=16);
        let ctx_end = rng.random_range(2..=len);
        let ctx = 1..ctx_end;
        let l = [1, 2, 3, 10][case % 4];
        let mut logit = |_| rng.random_range(-3.0..3.0);
        let mut ls: Vec<f64> = (0..len).map(&mut logit).collect();
        let mut le: Vec<f64> = (0..len).map(&mut logit).collect();
        if case % 5 == 0 {
            ls[0] += 8.0;
            le[0] += 8.0;
        }
        // Logits enter through a one-column decoder output and unit selectors.
        let h = Tensor::from_fn(len, 2, |r, c| if c == 0 { ls[r] } else { le[r] });
        let choice = select_span(&h, &[1.0, 0.0], &[0.0, 1.0], ctx.clone(), l).unwrap();
        let keep = |i: usize| i == 0 || ctx.contains(&i);
        let (ps, pe) = (softmax_masked(&ls, keep), softmax_masked(&le, keep));
        let expected = brute_force_span(&ps, &pe, ctx.clone(), l);
        let direct = best_span(&ps, &pe, ctx.clone(), l).unwrap().0;
        let probs_close = choice
            .start_probs
            .iter()
            .zip(&ps)
            .chain(choice.end_probs.iter().zip(&pe))
            .all(|(a, b)| (a - b).abs() < 1e-12);
        if choice.span == expected && direct == expected && probs_close {
            agree += 1;
        }
        nulls += usize::from(expected.is_empty());
    }
    let pass = agree == 200 && nulls > 0;
    report(
        4,
        "span selection vs enumeration",
        pass,
        &format!("{agree}/200 agree ({nulls} null answers)"),
    );
    pass
}

fn c5_window_round_trip() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (corpus, reg) = synthetic(20, 5);
    let config = ModelConfig::default();
    let mut identity = 0;
    for doc in &corpus.documents {
        let inp = assemble(doc, &reg, &config.assembly()).unwrap();
        let plan = plan_windows(&inp, config.d1, config.d2, config.max_len).unwrap();
        let x = Tensor::from_fn(inp.len(), 6, |_, _| rng.random_range(-1.0..1.0));
        let merged = merge_windows(std::slice::from_ref(&x), &plan).unwrap();
        identity += usize::from(plan.is_identity() && bits(&merged) == bits(&x));
    }

    let long = GenConfig {
        documents: 5,
        min_len: 600,
        max_len: 900,
        event_counts: vec![(3, 0.5), (6, 0.5)],
        ..GenConfig::default()
    };
    let long_corpus = generate_synthetic(&long, 5).unwrap();
    let mut worst: f64 = 0.0;
    let mut multi_pass = true;
    for doc in &long_corpus.documents {
        let inp = assemble(doc, &reg, &config.assembly()).unwrap();
        let plan = plan_windows(&inp, config.d1, config.d2, config.max_len).unwrap();
        multi_pass &= plan.passes.len() > 1;
        let c = rng.random_range(-5.0..5.0);
        let mats: Vec<Tensor> = plan
            .passes
            .iter()
            .map(|p| Tensor::filled(p.positions.len(), 4, c))
            .collect();
        let merged = merge_windows(&mats, &plan).unwrap();
        for v in &merged.data {
            worst = worst.max((v - c).abs());
        }
    }
    let pass = identity == corpus.len() && worst <= 1e-12 && multi_pass;
    report(
        5,
        "window plan/merge",
        pass,
        &format!(
            "{identity}/{} short inputs identity; constant merge max deviation {worst:.1e} over {} long docs",
            corpus.len(),
            long_corpus.len()
        ),
    );
    pass
}

/// Intra/Inter/NA counts from region sizes alone.
fn closed_form(inp: &AssembledInput) -> (usize, usize, usize) {
    let p: Vec<usize> = inp.prompts.iter().map(|r| r.range.len()).collect();
    let p_total: usize = p.iter().sum();
    let p_sq: usize = p.iter().map(|x| x * x).sum();
    let mut intra = p_sq;
    let mut inter = p_total * p_total - p_sq;
    for e in &inp.events {
        let t = e.trigger.len();
        intra += 2 * t * p[e.prompt];
        inter += 2 * t * (p_total - p[e.prompt]);
    }
    let l = inp.len();
    (intra, inter, l * l - intra - inter)
}

fn c6_dependency_counts() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut exact = 0;
    let mut multi = 0;
    for case in 0..100 {
        let gen = GenConfig {
            documents: 1,
            event_counts: vec![(2, 0.4), (3, 0.3), (5, 0.3)],
            min_len: 30,
            max_len: 60,
            ..GenConfig::default()
        };
        let reg = gen.registry().unwrap();
        let doc = generate_synthetic(&gen, rng.random()).unwrap().documents.remove(0);
        let cfg = AssemblyConfig {
            duplicate_same_type: case % 3 == 0,
            ..AssemblyConfig::default()
        };
        let inp = assemble(&doc, &reg, &cfg).unwrap();
        let m = build_dependency_matrix(&inp);
        let counts = (
            m.count(Dependency::Intra),
            m.count(Dependency::Inter),
            m.count(Dependency::None),
        );
        exact += usize::from(counts == closed_form(&inp));
        multi += usize::from(inp.events.len() > 1);
    }
    let pass = exact == 100 && multi == 100;
    report(
        6,
        "dependency-matrix counts",
        pass,
        &format!("{exact}/100 assemblies match the closed form"),
    );
    pass
}

fn repeats_type(d: &deeia::corpus::Document) -> bool {
    let types: BTreeSet<_> = d.events.iter().map(|e| &e.event_type).collect();
    types.len() < d.events.len()
}

/// Train Arg-C F1 on the documents with (`true`) or without repeated event types.
fn subset_f1(model: &Model, corpus: &Corpus, reg: &TemplateRegistry, repeated: bool) -> f64 {
    let sub = Corpus::new(
        corpus
            .documents
            .iter()
            .filter(|d| repeats_type(d) == repeated)
            .cloned()
            .collect(),
    );
    let preds = predict_corpus(model, reg, &sub, Mode::Multi).unwrap();
    evaluate(&preds, &sub).unwrap().arg_c.f1
}

struct Trained {
    model: Model,
    f1: f64,
    elapsed: Duration,
}

fn train_on(corpus: &Corpus, reg: &TemplateRegistry, config: &ModelConfig) -> Trained {
    let start = Instant::now();
    let out = train(corpus, reg, config, &TrainConfig::default(), |_| {}).unwrap();
    let elapsed = start.elapsed();
    let preds = predict_corpus(&out.model, reg, corpus, Mode::Multi).unwrap();
    let f1 = evaluate(&preds, corpus).unwrap().arg_c.f1;
    Trained {
        model: out.model,
        f1,
        elapsed,
    }
}

fn slot_outputs(model: &Model, corpus: &Corpus, reg: &TemplateRegistry) -> Vec<(BTreeSet<String>, Vec<u64>)> {
    corpus
        .documents
        .iter()
        .map(|d| {
            let out = predict(model, reg, d, Mode::Multi).unwrap();
            let spans = out
                .predictions
                .iter()
                .map(|p| format!("{}:{}:{}-{}", p.event_id, p.role, p.start, p.end))
                .collect();
            let probs = out
                .slots
                .iter()
                .flat_map(|s| s.start_probs.iter().chain(&s.end_probs))
                .map(|v| v.to_bits())
                .collect();
            (spans, probs)
        })
        .collect()
}

fn c7_and_c10_training() -> (bool, bool) {
    let (corpus, reg) = synthetic(50, 7);
    let multi = corpus.documents.iter().filter(|d| d.events.len() > 1).count();
    let share = multi as f64 / corpus.len() as f64;
    let full_config = ModelConfig::default();
    let full = train_on(&corpus, &reg, &full_config);
    let pass7 = full.f1 >= 0.95 && share >= 0.4 && full.elapsed < Duration::from_secs(15 * 60);
    report(
        7,
        "overfit synthetic corpus",
        pass7,
        &format!(
            "train Arg-C F1 {:.4} after {} steps in {:.0}s; {multi}/{} multi-event docs; \
             F1 {:.4} on the {} docs repeating an event type, {:.4} on the rest",
            full.f1,
            TrainConfig::default().steps,
            full.elapsed.as_secs_f64(),
            corpus.len(),
            subset_f1(&full.model, &corpus, &reg, true),
            corpus.documents.iter().filter(|d| repeats_type(d)).count(),
            subset_f1(&full.model, &corpus, &reg, false),
        ),
    );

    // Not a criterion: the same run with one prompt copy per event, which
    // separates same-type events at the slot level.
    let dup = train_on(
        &corpus,
        &reg,
        &ModelConfig {
            duplicate_same_type: true,
            ..full_config.clone()
        },
    );
    let _ = std::io::stderr().write_all(
        format!(
            "acceptance  7 info duplicate_same_type=true: train Arg-C F1 {:.4} in {:.0}s\n",
            dup.f1,
            dup.elapsed.as_secs_f64()
        )
        .as_bytes(),
    );

    let reference = slot_outputs(&full.model, &corpus, &reg);
    let mut parts = Vec::new();
    let mut pass10 = true;
    for (name, config) in [
        (
            "w/o EIA",
            ModelConfig {
                use_eia: false,
                ..full_config.clone()
            },
        ),
        (
            "w/o DE",
            ModelConfig {
                gamma: 0.0,
                ..full_config.clone()
            },
        ),
    ] {
        let ablated = train_on(&corpus, &reg, &config);
        let other = slot_outputs(&ablated.model, &corpus, &reg);
        let probs_differ = reference.iter().zip(&other).any(|(a, b)| a.1 != b.1);
        let spans_differ = reference.iter().zip(&other).filter(|(a, b)| a.0 != b.0).count();
        pass10 &= probs_differ;
        parts.push(format!(
            "{name}: F1 {:.4}, distributions differ {probs_differ}, {spans_differ} docs with different spans",
            ablated.f1
        ));
    }
    report(10, "ablation switches", pass10, &parts.join("; "));
    (pass7, pass10)
}

fn c8_efficiency() -> bool {
    let (docs, reg) = bench_documents(&[1, 2, 4, 8], 1, 8).unwrap();
    let config = ModelConfig::default();
    let model = Model::new(config.clone(), Vocab::build(&docs, &reg, config.max_markers), 0).unwrap();
    let r = bench(&model, &reg, &docs.documents, 100, 3).unwrap();
    let mut passes_ok = true;
    for k in [1usize, 2, 4, 8] {
        passes_ok &= r.bucket(k, Mode::Multi).unwrap().encoder_passes == 1.0;
        passes_ok &= r.bucket(k, Mode::SingleLoop).unwrap().encoder_passes == k as f64;
    }
    let multi = r.bucket(8, Mode::Multi).unwrap().mean_seconds;
    let single = r.bucket(8, Mode::SingleLoop).unwrap().mean_seconds;
    let ratio = multi / single;
    let pass = passes_ok && ratio <= 0.5;
    report(
        8,
        "multi vs single-loop inference",
        pass,
        &format!(
            "pass counts exact: {passes_ok}; K=8 multi {:.2}ms vs single_loop {:.2}ms (ratio {ratio:.3}) over 100 repeats",
            multi * 1e3,
            single * 1e3
        ),
    );
    pass
}

/// Category from token sets, written independently of the library.
fn categories_by_sets(p: &[usize], g: &[usize]) -> Vec<ErrorCategory> {
    let inter = p.iter().filter(|x| g.contains(x)).count();
    let mut out = Vec::new();
    match (p.is_empty(), g.is_empty()) {
        (false, true) => out.push(ErrorCategory::OverExtraction),
        (true, false) => out.push(ErrorCategory::UnderExtraction),
        (false, false) => {
            let (p_sub, g_sub) = (inter == p.len(), inter == g.len());
            if inter == 0 {
                out.push(ErrorCategory::WrongSpan);
            }
            if (p_sub || g_sub) && !(p_sub && g_sub) {
                out.push(ErrorCategory::Partial);
            }
            if inter > 0 && !p_sub && !g_sub {
                out.push(ErrorCategory::Overlap);
            }
        }
        (true, true) => {}
    }
    out
}

fn c9_error_taxonomy() -> bool {
    let mut spans: Vec<Option<Span>> = vec![None];
    for s in 0..8 {
        for e in s + 1..=8 {
            spans.push(Some(Span::new(s, e)));
        }
    }
    let tokens = |s: Option<Span>| s.map(|s| (s.start..s.end).collect::<Vec<_>>()).unwrap_or_default();
    let mut checked = 0;
    let mut wrong = 0;
    for &p in &spans {
        for &g in &spans {
            let expected = categories_by_sets(&tokens(p), &tokens(g));
            let got = classify_error(p, g);
            let ok = match got {
                Ok(c) => expected == vec![c],
                Err(_) => p == g && expected.is_empty(),
            };
            if got.is_ok() {
                checked += 1;
            }
            wrong += usize::from(!ok);
        }
    }
    let g = Some(Span::new(3, 6));
    let fixtures = classify_error(Some(Span::new(7, 9)), g) == Ok(ErrorCategory::WrongSpan)
        && classify_error(Some(Span::new(3, 5)), g) == Ok(ErrorCategory::Partial)
        && classify_error(Some(Span::new(5, 8)), g) == Ok(ErrorCategory::Overlap);
    let pass = wrong == 0 && fixtures;
    report(
        9,
        "error taxonomy partition",
        pass,
        &format!("{checked} error pairs each in exactly one category, {wrong} mismatches; fixtures ok: {fixtures}"),
    );
    pass
}

#[test]
fn acceptance_criteria() {
    // libtest has already printed "test acceptance_criteria ... " without a newline.
    let _ = std::io::stderr().write_all(b"\n");
    let mut results = vec![
        (1, c1_gradient_fidelity()),
        (2, c2_vanilla_equivalence()),
        (3, c3_hungarian()),
        (4, c4_span_selection()),
        (5, c5_window_round_trip()),
        (6, c6_dependency_counts()),
    ];
    let (c7, c10) = c7_and_c10_training();
    results.push((7, c7));
    results.push((8, c8_efficiency()));
    results.push((9, c9_error_taxonomy()));
    results.push((10, c10));
    results.sort_unstable();
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed acceptance criteria: {failed:?}");
}
