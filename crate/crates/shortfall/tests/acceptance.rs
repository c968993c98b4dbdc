//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;

use shortfall::commands;
use shortfall::formats;
use shortfall_core::autodiff::{
    additive_attention, attention_keys, bidirectional_gru, dense, grad_check, gru_cell, AdamConfig, AttentionParams,
    DenseParams, GruParams, Initializer, ParameterStore, Tape, Tensor, Var,
};
use shortfall_core::data::{
    build_dataset, corpus_censored_fraction, encode_lanes, BuildSettings, LaneSeries, FLAT_LEN,
};
use shortfall_core::explain::{
    exact_shapley, shapley_sampling, window_players, FnModel, Player, Scalar, SurvivalScalar,
};
use shortfall_core::model::{ablate_homogeneous, mean_nll, train, GroupIds, HetSeq2Surv, ModelConfig, TrainSettings};
use shortfall_core::qa::{classify_case, evaluate, precision_recall, AdaptedConfusion, EvalCase, EvalConfig, Label};
use shortfall_core::rng;
use shortfall_core::survival::{
    event_exposure, fit_linear_logistic_hazard, negative_log_likelihood, pmf_from_hazard, survival_from_hazard,
    FitSettings, HazardCurve, ObservedOutcome, TimeGrid,
};
use shortfall_core::synth::{default_regimes, generate, generate_parametric_survival, GeneratorConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn likelihood_oracle() -> Outcome {
    let mut r = rng::stream(1, "acceptance-nll", 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let horizon = r.random_range(1..=30usize);
        let n = r.random_range(1..=8usize);
        let mut hazards = Vec::new();
        let mut outcomes = Vec::new();
        for _ in 0..n {
            let h: Vec<f64> = (0..horizon).map(|_| r.random_range(0.001..0.999)).collect();
            hazards.push(HazardCurve::new(h).unwrap());
            outcomes.push(ObservedOutcome::new(r.random_range(1..=horizon as u32), r.random_bool(0.5)).unwrap());
        }
        let direct = negative_log_likelihood(&hazards, &outcomes).unwrap();
        // Events contribute the pmf at their day, censored samples the
        // survival probability at theirs.
        let via_pmf: f64 = hazards
            .iter()
            .zip(&outcomes)
            .map(|(h, o)| {
                let k = o.t as usize - 1;
                if o.event {
                    -pmf_from_hazard(h.values()).unwrap()[k].ln()
                } else {
                    -survival_from_hazard(h.values()).unwrap().values()[k].ln()
                }
            })
            .sum();
        worst = worst.max((direct - via_pmf).abs());
    }
    check(worst <= 1e-10, format!("1000 instances, max |difference| {worst:.2e} (limit 1e-10)"))
}

// ---------------------------------------------------------------- 2

fn random_tensor(r: &mut rng::Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    t
}

/// Weighted sum of every output coordinate with fixed random weights.
fn probe(tape: &mut Tape, out: Var, seed: u64) -> shortfall_core::Result<Var> {
    let mut r = rng::stream(seed, "acceptance-probe", 0);
    let w = tape.input(random_tensor(&mut r, tape.value(out).shape()));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn primitive_error(
    shapes: &[&[usize]],
    seed: u64,
    build: impl Fn(&mut Tape, &[Var]) -> shortfall_core::Result<Var>,
) -> f64 {
    let mut r = rng::stream(seed, "acceptance-primitive", 0);
    let mut store = ParameterStore::new();
    let ids: Vec<_> =
        shapes.iter().enumerate().map(|(i, s)| store.add(format!("p{i}"), random_tensor(&mut r, s)).unwrap()).collect();
    let report = grad_check(
        &mut store,
        |tape, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
            let out = build(tape, &vars)?;
            probe(tape, out, seed)
        },
        1e-6,
        1e-6,
    )
    .unwrap();
    report.max_rel_error
}

fn gradient_verification() -> Outcome {
    let outcomes = [ObservedOutcome::event(2), ObservedOutcome::censored(3)];
    let mut primitives: Vec<(&str, f64)> = vec![
        ("matmul_nt", primitive_error(&[&[3, 4], &[2, 4]], 1, |t, v| t.matmul_nt(v[0], v[1]))),
        ("add_row", primitive_error(&[&[3, 2], &[2]], 2, |t, v| t.add_row(v[0], v[1]))),
        ("add", primitive_error(&[&[5], &[5]], 3, |t, v| t.add(v[0], v[1]))),
        ("sub", primitive_error(&[&[5], &[5]], 4, |t, v| t.sub(v[0], v[1]))),
        ("mul", primitive_error(&[&[5], &[5]], 5, |t, v| t.mul(v[0], v[1]))),
        ("sigmoid", primitive_error(&[&[5]], 6, |t, v| Ok(t.sigmoid(v[0])))),
        ("tanh", primitive_error(&[&[5]], 7, |t, v| Ok(t.tanh(v[0])))),
        ("concat", primitive_error(&[&[2, 3], &[2, 1]], 8, |t, v| t.concat(&[v[0], v[1]]))),
        ("gather", primitive_error(&[&[4, 3]], 9, |t, v| t.gather(v[0], &[2, 0, 2]))),
        ("stack", primitive_error(&[&[2, 3], &[2, 3], &[2, 3]], 10, |t, v| t.stack(v))),
        ("attn_scores", primitive_error(&[&[2, 3], &[2, 4, 3], &[3]], 11, |t, v| t.attn_scores(v[0], v[1], v[2]))),
        ("softmax_rows", primitive_error(&[&[2, 4]], 12, |t, v| Ok(t.softmax_rows(v[0])))),
        ("weighted_sum", primitive_error(&[&[2, 4], &[2, 4, 3]], 13, |t, v| t.weighted_sum(v[0], v[1]))),
        ("sum", primitive_error(&[&[2, 3]], 14, |t, v| Ok(t.sum(v[0])))),
        ("survival_nll", primitive_error(&[&[2, 4]], 15, move |t, v| t.survival_nll(v[0], &outcomes))),
    ];

    // Layers built from the primitives, with their own parameter stores.
    let layer = |name: &'static str, seed: u64, f: &dyn Fn(&mut ParameterStore, &mut Initializer) -> f64| {
        let mut store = ParameterStore::new();
        let mut init = Initializer::new(rng::stream(seed, "acceptance-layer", 0));
        (name, f(&mut store, &mut init))
    };
    primitives.push(layer("dense", 20, &|store, init| {
        let p = DenseParams::register(store, init, "d", 3, 4).unwrap();
        let x = random_tensor(&mut rng::stream(21, "x", 0), &[2, 3]);
        grad_check(
            store,
            |tape, s| {
                let vars = p.bind(tape, s);
                let x = tape.input(x.clone());
                let y = dense(tape, x, &vars)?;
                probe(tape, y, 21)
            },
            1e-6,
            1e-6,
        )
        .unwrap()
        .max_rel_error
    }));
    primitives.push(layer("gru_cell", 22, &|store, init| {
        let p = GruParams::register(store, init, "g", 3, 2).unwrap();
        let x = random_tensor(&mut rng::stream(23, "x", 0), &[2, 3]);
        let h = random_tensor(&mut rng::stream(24, "h", 0), &[2, 2]);
        grad_check(
            store,
            |tape, s| {
                let vars = p.bind(tape, s);
                let (x, h) = (tape.input(x.clone()), tape.input(h.clone()));
                let y = gru_cell(tape, x, h, &vars)?;
                probe(tape, y, 23)
            },
            1e-6,
            1e-6,
        )
        .unwrap()
        .max_rel_error
    }));
    primitives.push(layer("bidirectional_gru", 25, &|store, init| {
        let fwd = GruParams::register(store, init, "f", 2, 2).unwrap();
        let bwd = GruParams::register(store, init, "b", 2, 2).unwrap();
        let steps: Vec<Tensor> = (0..3).map(|i| random_tensor(&mut rng::stream(26, "x", i), &[2, 2])).collect();
        grad_check(
            store,
            |tape, s| {
                let (f, b) = (fwd.bind(tape, s), bwd.bind(tape, s));
                let xs: Vec<Var> = steps.iter().map(|x| tape.input(x.clone())).collect();
                let states = bidirectional_gru(tape, &xs, &f, &b)?;
                let all = tape.stack(&states.states)?;
                probe(tape, all, 26)
            },
            1e-6,
            1e-6,
        )
        .unwrap()
        .max_rel_error
    }));
    primitives.push(layer("additive_attention", 27, &|store, init| {
        let p = AttentionParams::register(store, init, "a", 3, 2, 4).unwrap();
        let keys = random_tensor(&mut rng::stream(28, "k", 0), &[2, 3, 2]);
        let query = random_tensor(&mut rng::stream(28, "q", 0), &[2, 3]);
        grad_check(
            store,
            |tape, s| {
                let vars = p.bind(tape, s);
                let (k, q) = (tape.input(keys.clone()), tape.input(query.clone()));
                let projected = attention_keys(tape, k, &vars)?;
                let (context, _) = additive_attention(tape, q, &projected, &vars)?;
                probe(tape, context, 28)
            },
            1e-6,
            1e-6,
        )
        .unwrap()
        .max_rel_error
    }));
    let (worst_name, worst_primitive) =
        primitives.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });

    let config = ModelConfig {
        encoder_hidden: 4,
        embed_dims: [2, 2, 2],
        group_mlp_hidden: 4,
        horizon: 8,
        vocab_sizes: [3, 3, 4],
        ..ModelConfig::default()
    };
    let mut model = HetSeq2Surv::new(&config, 3).unwrap();
    let mut r = rng::stream(4, "acceptance-windows", 0);
    let windows: Vec<Vec<f64>> = (0..2).map(|_| (0..FLAT_LEN).map(|_| r.random_range(0.0..1.0)).collect()).collect();
    let refs: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
    let ids = [GroupIds { site: 1, plant: 2, part: 3 }, GroupIds { site: 2, plant: 0, part: 1 }];
    let outcomes = [ObservedOutcome::event(3), ObservedOutcome::censored(8)];
    let net = model.network().clone();
    let full = grad_check(model.store_mut(), |tape, s| net.loss(tape, s, &refs, &ids, &outcomes), 1e-5, 1e-4).unwrap();

    check(
        worst_primitive < 1e-6 && full.max_rel_error < 1e-4,
        format!(
            "{} primitives and layers, worst {worst_name} {worst_primitive:.2e} (limit 1e-6); \
             full loss d=4 H=8 {:.2e} (limit 1e-4)",
            primitives.len(),
            full.max_rel_error
        ),
    )
}

// ---------------------------------------------------------------- 3

fn baseline_recovery() -> Outcome {
    let horizon = 10;
    let theta: Vec<Vec<f64>> =
        (0..horizon).map(|k| vec![-2.5 + 0.1 * k as f64, 0.8, -0.6, 0.3 * (k as f64 / 4.0).sin()]).collect();
    let (x, outcomes) = generate_parametric_survival(5000, &theta, 11).unwrap();
    let grid = TimeGrid::new(horizon).unwrap();
    let fit = fit_linear_logistic_hazard(&x, &outcomes, grid, FitSettings::default()).unwrap();
    let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut total = 0.0;
    for row in &x {
        let fitted = fit.params.hazard(row);
        for (k, t) in theta.iter().enumerate() {
            let truth = sigmoid(t[0] + t[1..].iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
            total += (fitted.values()[k] - truth).abs();
        }
    }
    let mae = total / (x.len() * horizon) as f64;

    let empty = vec![Vec::new(); outcomes.len()];
    let intercept = fit_linear_logistic_hazard(&empty, &outcomes, grid, FitSettings::default()).unwrap();
    let (events, at_risk) = event_exposure(&outcomes, grid).unwrap();
    let mut ratio_gap = 0.0f64;
    for k in 0..horizon {
        if at_risk[k] > 0 && events[k] > 0 && events[k] < at_risk[k] {
            let ratio = events[k] as f64 / at_risk[k] as f64;
            ratio_gap = ratio_gap.max((sigmoid(intercept.params.theta[k][0]) - ratio).abs());
        }
    }
    check(
        mae < 0.02 && ratio_gap <= 1e-4,
        format!("hazard MAE {mae:.4} (limit 0.02); intercept-only vs occurrence/exposure {ratio_gap:.2e} (limit 1e-4)"),
    )
}

// ---------------------------------------------------------------- 4

const ABLATION_SEEDS: u64 = 3;
const ABLATION_HORIZON: usize = 60;
const ABLATION_EPOCHS: usize = 25;
const HELD_OUT_SHARE: f64 = 0.2;

fn ablation_settings(seed: u64) -> (ModelConfig, TrainSettings) {
    let config = ModelConfig {
        encoder_hidden: 8,
        embed_dims: [2; 3],
        group_mlp_hidden: 4,
        horizon: ABLATION_HORIZON,
        ..ModelConfig::default()
    };
    let settings = TrainSettings {
        max_epochs: ABLATION_EPOCHS,
        patience: ABLATION_EPOCHS,
        id_dropout: 0.1,
        seed,
        adam: AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() },
        ..TrainSettings::default()
    };
    (config, settings)
}

fn heterogeneity_ablation() -> Outcome {
    let corpus = generate(&GeneratorConfig::default(), &default_regimes()).unwrap();
    let mut order: Vec<usize> = (0..corpus.lanes.len()).collect();
    order.shuffle(&mut rng::stream(1, "held-out-lanes", 0));
    let cut = (HELD_OUT_SHARE * order.len() as f64).round() as usize;
    let pick = |idx: &[usize]| -> Vec<LaneSeries> { idx.iter().map(|&i| corpus.lanes[i].clone()).collect() };
    let (held_out, rest) = (pick(&order[..cut]), pick(&order[cut..]));
    let data = build_dataset(&rest, &BuildSettings { validation_fraction: 0.15, ..BuildSettings::default() }).unwrap();
    let mut clamped = 0;
    let test = encode_lanes(&held_out, 7, &data.stats, &data.vocab, &mut clamped).unwrap();

    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..ABLATION_SEEDS {
        let (mut config, settings) = ablation_settings(seed);
        config.vocab_sizes = data.vocab.sizes();
        let run = |config: &ModelConfig| {
            let (model, _) = train(&data.train, &data.validation, config, &settings, &mut |_| {}).unwrap();
            let summary = evaluate(&model, &test, &EvalConfig::default()).unwrap();
            (summary.recall.unwrap_or(0.0), summary.nll)
        };
        let (full_recall, full_nll) = run(&config);
        let (abl_recall, abl_nll) = run(&ablate_homogeneous(&config));
        let pass = full_recall - abl_recall >= 0.15 && full_nll < abl_nll;
        ok &= pass;
        lines.push(format!(
            "seed {seed}: recall {full_recall:.3} vs {abl_recall:.3}, NLL {full_nll:.4} vs {abl_nll:.4}"
        ));
    }
    check(ok, format!("{} held-out lanes, {} windows; {}", held_out.len(), test.len(), lines.join("; ")))
}

// ---------------------------------------------------------------- 5

/// Day-by-day reading of the adapted rules: walk the horizon and note where
/// the alarm and the shortfall fall.
fn brute_force_label(predicted: u32, actual: ObservedOutcome, horizon: u32, tolerance: u32) -> Label {
    let mut alarm = None;
    let mut shortfall = None;
    for day in 1..=horizon {
        if day == predicted {
            alarm = Some(day);
        }
        if actual.event && day == actual.t {
            shortfall = Some(day);
        }
    }
    match (alarm, shortfall) {
        (Some(a), Some(s)) => {
            let (lo, hi) = (s.saturating_sub(tolerance), s + tolerance);
            if (lo..=hi).contains(&a) {
                Label::TruePositive
            } else {
                Label::FalsePositive
            }
        }
        (Some(_), None) => Label::FalsePositive,
        (None, Some(_)) => Label::FalseNegative,
        (None, None) => {
            let watched_whole_horizon = actual.event || actual.t >= horizon;
            if watched_whole_horizon {
                Label::TrueNegative
            } else {
                Label::Excluded
            }
        }
    }
}

fn metrics_oracle() -> Outcome {
    let mut r = rng::stream(5, "acceptance-qa", 0);
    let mut disagreements = 0;
    for _ in 0..10_000 {
        let horizon = r.random_range(1..=60u32);
        let tolerance = r.random_range(0..horizon);
        let config = EvalConfig::new(horizon, tolerance).unwrap();
        let predicted = r.random_range(1..=2 * horizon + 1);
        let actual = ObservedOutcome::new(r.random_range(1..=2 * horizon + 1), r.random_bool(0.5)).unwrap();
        let case = EvalCase::new(predicted, actual).unwrap();
        if classify_case(&case, &config) != brute_force_label(predicted, actual, horizon, tolerance) {
            disagreements += 1;
        }
    }
    // Plant A shares tp/fn/fp/tn = 0.23/0.05/0.04/0.68 as counts per 100.
    let plant_a = AdaptedConfusion { tp: 23, fn_: 5, fp: 4, tn: 68, excluded: 0 };
    let (p, rc) = precision_recall(&plant_a);
    let (p, rc) = (p.unwrap(), rc.unwrap());
    let rounded = |v: f64| (v * 1000.0).round() / 1000.0;
    check(
        disagreements == 0 && rounded(p) == 0.852 && rounded(rc) == 0.821,
        format!("{disagreements} disagreements in 10000 cases; Plant A precision {p:.3}, recall {rc:.3}"),
    )
}

// ---------------------------------------------------------------- 6

fn censoring_target() -> Outcome {
    let config = GeneratorConfig::default();
    let corpus = generate(&config, &default_regimes()).unwrap();
    let direct = corpus_censored_fraction(&corpus.lanes, 7);
    let data = build_dataset(&corpus.lanes, &BuildSettings::default()).unwrap();
    let all = data.train.iter().chain(&data.validation);
    let n = data.train.len() + data.validation.len();
    let pipeline = all.filter(|s| !s.outcome.event).count() as f64 / n as f64;
    check(
        (pipeline - 0.25).abs() <= 0.03 && direct == pipeline,
        format!("{} lanes, {n} windows, censored share {pipeline:.4} (target 0.25 ± 0.03)", corpus.lanes.len()),
    )
}

// ---------------------------------------------------------------- 7

fn singletons(n: usize) -> Vec<Player> {
    (0..n).map(|i| Player { label: format!("x{i}"), coords: vec![i] }).collect()
}

fn shapley_correctness() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // x2 is a dummy, x0 and x1 are symmetric.
    let f = FnModel(|x: &[f64]| x[0] * x[1] + x[0] + x[1] + 0.0 * x[2]);
    let r = exact_shapley(&f, &[1.0, 1.0, 5.0], &[0.0; 3], &singletons(3)).unwrap();
    let axioms = r.efficiency_gap() == 0.0
        && r.contributions[0].value == r.contributions[1].value
        && r.contributions[2].value == 0.0;
    ok &= axioms;
    notes.push(format!("axioms {}", if axioms { "hold" } else { "violated" }));

    let toy =
        |x: &[f64]| x[0] * x[1] + 2.0 * x[2] * x[3] * x[4] + (x[5] - x[6]).tanh() + x[7] * x[7] + 0.5 * x[0] * x[7];
    let input = [1.0, 2.0, -1.0, 0.5, 1.5, 0.3, -0.7, 1.2];
    let exact = exact_shapley(&FnModel(toy), &input, &[0.0; 8], &singletons(8)).unwrap();
    let sampled = shapley_sampling(&FnModel(toy), &input, &[0.0; 8], &singletons(8), 200, 3).unwrap();
    let scale = (exact.prediction - exact.base).abs();
    let worst = exact
        .contributions
        .iter()
        .zip(&sampled.contributions)
        .map(|(a, b)| (a.value - b.value).abs())
        .fold(0.0, f64::max);
    ok &= worst <= 0.05 * scale;
    notes.push(format!("8-player sampling error {:.2}% of |prediction − base|", 100.0 * worst / scale));

    // Efficiency of a real model report with id players.
    let config = ModelConfig {
        encoder_hidden: 4,
        embed_dims: [2; 3],
        group_mlp_hidden: 4,
        horizon: 12,
        vocab_sizes: [3, 3, 3],
        ..ModelConfig::default()
    };
    let model = HetSeq2Surv::new(&config, 9).unwrap();
    let mut r = rng::stream(6, "acceptance-explain", 0);
    let mut input: Vec<f64> = (0..FLAT_LEN).map(|_| r.random_range(0.0..1.0)).collect();
    input.extend([1.0, 2.0, 1.0]);
    let mut baseline = vec![0.5; FLAT_LEN];
    baseline.extend([0.0; 3]);
    let ids = GroupIds { site: 1, plant: 2, part: 1 };
    let mut worst_gap = 0.0f64;
    for scalar in [Scalar::Rmst, Scalar::HazardAt(3)] {
        let m = SurvivalScalar { model: &model, ids, scalar };
        let rep = shapley_sampling(&m, &input, &baseline, &window_players(true), 4, 1).unwrap();
        worst_gap = worst_gap.max(rep.efficiency_gap().abs() / rep.prediction.abs().max(1.0));
    }
    for rep in [&exact, &sampled] {
        worst_gap = worst_gap.max(rep.efficiency_gap().abs() / rep.prediction.abs().max(1.0));
    }
    ok &= worst_gap <= 1e-9;
    notes.push(format!("worst efficiency gap {worst_gap:.1e} (limit 1e-9)"));
    check(ok, notes.join("; "))
}

// ---------------------------------------------------------------- 8

const SMALL: &str = r#"
seed = 3

[generator]
sites = 2
plants = 2
part_families = 2
parts_per_family = 2
days = 200

[model]
encoder_hidden = 4
embed_dims = [2, 2, 2]
group_mlp_hidden = 4
horizon = 12

[training]
max_epochs = 3
"#;

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_shortfall")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(root: &Path, config: &Path) -> Result<(), String> {
    let c = config.to_str().unwrap();
    let p = |name: &str| root.join(name).to_str().unwrap().to_owned();
    cli(&["--config", c, "gen", "--out", &p("gen")])?;
    let lanes = root.join("gen").join(commands::LANES_FILE);
    cli(&["--config", c, "prepare", "--lanes", lanes.to_str().unwrap(), "--out", &p("data")])?;
    cli(&["--config", c, "train", "--data", &p("data"), "--out", &p("model")])
}

fn determinism_and_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.toml");
    std::fs::write(&config, SMALL).map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a, &config)?;
    pipeline(&b, &config)?;
    let mut compared = 0;
    for entry in walk(&a) {
        let rel = entry.strip_prefix(&a).unwrap();
        let (x, y) = (std::fs::read(&entry).unwrap(), std::fs::read(b.join(rel)).map_err(|e| e.to_string())?);
        if x != y {
            return Err(format!("{} differs between same-seed reruns", rel.display()));
        }
        compared += 1;
    }

    // Read and write again: the bytes must not change.
    let round = dir.path().join("round");
    std::fs::create_dir_all(&round).unwrap();
    let lanes = formats::read_lanes(&a.join("gen").join(commands::LANES_FILE)).map_err(|e| e.to_string())?;
    formats::write_lanes(&round.join(commands::LANES_FILE), &lanes).map_err(|e| e.to_string())?;
    let train = formats::read_samples(&a.join("data").join(commands::TRAIN_FILE)).map_err(|e| e.to_string())?;
    formats::write_samples(&round.join(commands::TRAIN_FILE), &train).map_err(|e| e.to_string())?;
    let stats = formats::read_stats(&a.join("data").join(commands::STATS_FILE)).map_err(|e| e.to_string())?;
    formats::write_stats(&round.join(commands::STATS_FILE), &stats).map_err(|e| e.to_string())?;
    let ckpt_path = a.join("model").join(commands::CHECKPOINT_FILE);
    let (net, ckpt) = commands::load_checkpoint(&ckpt_path).map_err(|e| e.to_string())?;
    formats::write_json(&round.join(commands::CHECKPOINT_FILE), &ckpt).map_err(|e| e.to_string())?;
    for (dir_name, file) in [
        ("gen", commands::LANES_FILE),
        ("data", commands::TRAIN_FILE),
        ("data", commands::STATS_FILE),
        ("model", commands::CHECKPOINT_FILE),
    ] {
        if std::fs::read(a.join(dir_name).join(file)).unwrap() != std::fs::read(round.join(file)).unwrap() {
            return Err(format!("{file} changed after a read/write round trip"));
        }
    }
    let validation =
        formats::read_samples(&a.join("data").join(commands::VALIDATION_FILE)).map_err(|e| e.to_string())?;
    let reloaded = HetSeq2Surv::from_checkpoint(&ckpt).map_err(|e| e.to_string())?;
    let same = mean_nll(&net, &validation).unwrap().to_bits() == mean_nll(&reloaded, &validation).unwrap().to_bits();
    check(
        same,
        format!(
            "{compared} files bit-identical across reruns; lanes, windows, stats and checkpoint round-trip losslessly"
        ),
    )
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

// ---------------------------------------------------------------- 9

fn overfit_sanity() -> Outcome {
    let config =
        GeneratorConfig { sites: 1, plants: 2, part_families: 2, parts_per_family: 2, ..GeneratorConfig::default() };
    let corpus = generate(&config, &default_regimes()).unwrap();
    let data =
        build_dataset(&corpus.lanes, &BuildSettings { validation_fraction: 0.0, ..BuildSettings::default() }).unwrap();
    let mut samples = data.train.clone();
    samples.shuffle(&mut rng::stream(2, "overfit-pick", 0));
    samples.truncate(32);
    let model_config = ModelConfig {
        encoder_hidden: 8,
        embed_dims: [4; 3],
        group_mlp_hidden: 8,
        horizon: 12,
        vocab_sizes: data.vocab.sizes(),
        ..ModelConfig::default()
    };
    let settings = TrainSettings {
        max_epochs: 100,
        patience: 100,
        batch_size: 32,
        id_dropout: 0.0,
        seed: 1,
        adam: AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() },
    };
    let initial = mean_nll(&HetSeq2Surv::new(&model_config, settings.seed).unwrap(), &samples).unwrap();
    let (model, report) = train(&samples, &[], &model_config, &settings, &mut |_| {}).unwrap();
    let last = mean_nll(&model, &samples).unwrap();
    check(
        last < 0.2 * initial,
        format!(
            "32 samples, d=8, H=12: NLL {initial:.4} -> {last:.4} ({:.1}% of initial, limit 20%) in {} epochs",
            100.0 * last / initial,
            report.epochs_run()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("likelihood oracle", likelihood_oracle),
        ("gradient verification", gradient_verification),
        ("baseline recovery", baseline_recovery),
        ("heterogeneity ablation", heterogeneity_ablation),
        ("adapted-metrics oracle", metrics_oracle),
        ("censoring target", censoring_target),
        ("Shapley correctness", shapley_correctness),
        ("determinism and round trips", determinism_and_round_trips),
        ("overfit sanity", overfit_sanity),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
