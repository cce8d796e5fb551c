//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr and then asserts.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use searchrank::datamodel::{embed_categorical, EncodedExample, Labels};
use searchrank::error::Result;
use searchrank::evalmetrics::{
    auc_roc, mrr_at_k, pd_at_k, rank_all, relevant_sets, MetricParams, RankedList,
};
use searchrank::harness::{
    ablate, grid_search_weights, model_pd, prepare, run_experiment, DataConfig, ExperimentConfig, RunLog,
    SyntheticWorldConfig,
};
use searchrank::networks::dcn::{cross_layer, DcnBottom};
use searchrank::networks::ftt::FttBottom;
use searchrank::networks::layers::{Linear, Mlp, TransformerBlock};
use searchrank::networks::mmoe::gate_forward;
use searchrank::networks::{Bottom, DcnConfig, FttConfig, Model, Task, TrainConfig};
use searchrank::numerics::gradcheck::{check_params, jitter};
use searchrank::numerics::{kernels, normal_init, Graph, ParamStore, Tensor, Var};
use searchrank::pipeline::{
    discretize_labels, label_aggregates, position_weight, stratified_sample, transaction_weight, weighted_ctr,
    ClickAggregate, PositionWeighting, RelevanceConfig, SamplingConfig,
};
use searchrank::textmatch::{match_cross, match_dot, MatchingMode};

static SERIAL: Mutex<()> = Mutex::new(());

/// Written to the raw stderr handle so the line shows even when libtest
/// captures output.
fn report(n: u32, ok: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

// ---------------------------------------------------------------- 1

type LossFn = Box<dyn Fn(&Graph, &ParamStore) -> Result<Var>>;

/// `Σ y ⊙ C` for a fixed random `C`, so every output element carries a
/// distinct weight into the scalar loss.
fn project(g: &Graph, y: Var) -> Result<Var> {
    let c = normal_init(&mut ChaCha8Rng::seed_from_u64(99), &g.shape(y), 1.0);
    g.sum(g.mul(y, g.constant(c))?)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    normal_init(rng, &[rows, cols], 1.0)
}

fn layer_instance(layer: &str, rng: &mut ChaCha8Rng) -> (ParamStore, LossFn) {
    let mut store = ParamStore::new();
    let b = rng.random_range(2..5);
    let n = rng.random_range(3..7);
    let f: LossFn = match layer {
        "embedding" => {
            let vocab = rng.random_range(3..8);
            let table = store.add("table", normal_init(rng, &[vocab, n], 0.5)).unwrap();
            let idx: Vec<usize> = (0..b + 2).map(|_| rng.random_range(0..vocab)).collect();
            Box::new(move |g, s| project(g, embed_categorical(g, s, table, &idx)?))
        }
        "cross" => {
            let cfg = DcnConfig {
                cross_layers: rng.random_range(1..3),
                deep_widths: vec![3],
            };
            let dcn = DcnBottom::new(&mut store, rng, "dcn", n, &cfg).unwrap();
            let x0 = random(rng, b, n);
            Box::new(move |g, s| project(g, dcn.cross_forward(g, s, g.constant(x0.clone()))?))
        }
        "deep" => {
            let widths = vec![rng.random_range(2..6), rng.random_range(2..5)];
            let mlp = Mlp::new(&mut store, rng, "deep", n, &widths, true).unwrap();
            let x = random(rng, b, n);
            Box::new(move |g, s| project(g, mlp.forward(g, s, g.constant(x.clone()))?))
        }
        "ftt_tokenizer" => {
            let cfg = FttConfig {
                dim: 4,
                layers: 1,
                heads: 2,
                ff_dim: 6,
                out_dim: 3,
            };
            let numeric = rng.random_range(1..4);
            let ftt = FttBottom::new(&mut store, rng, "ftt", numeric, 3, &cfg).unwrap();
            let x = random(rng, b, numeric);
            let cat = random(rng, b, 4);
            let m = random(rng, b, 3);
            Box::new(move |g, s| {
                let toks = ftt.tokens(g, s, &x, &[g.constant(cat.clone())], Some(g.constant(m.clone())))?;
                project(g, g.concat_rows(&toks)?)
            })
        }
        "transformer_block" => {
            let block = TransformerBlock::new(&mut store, rng, "blk", 4, 2, 6).unwrap();
            let segments = vec![rng.random_range(1..4), rng.random_range(1..4)];
            let x = random(rng, segments.iter().sum(), 4);
            Box::new(move |g, s| project(g, block.forward(g, s, g.constant(x.clone()), &segments)?))
        }
        "gate" => {
            let experts = rng.random_range(2..6);
            let gate = Linear::new(&mut store, rng, "gate", n, experts, false).unwrap();
            let x = random(rng, b, n);
            Box::new(move |g, s| project(g, g.softmax(gate.forward(g, s, g.constant(x.clone()))?)?))
        }
        "expert_mix" => {
            let k = rng.random_range(2..5);
            let logits = store.add("gate_logits", random(rng, b, k)).unwrap();
            let experts: Vec<_> = (0..k)
                .map(|i| store.add(format!("expert.{i}"), random(rng, b, n)).unwrap())
                .collect();
            Box::new(move |g, s| {
                let gates = g.softmax(g.param(s, logits))?;
                let e: Vec<Var> = experts.iter().map(|&id| g.param(s, id)).collect();
                project(g, g.mix(gates, &e)?)
            })
        }
        "tower" => {
            let hidden = rng.random_range(2..6);
            let tower = Mlp::new(&mut store, rng, "tower", n, &[hidden, 1], false).unwrap();
            let x = random(rng, b, n);
            Box::new(move |g, s| project(g, g.sigmoid(tower.forward(g, s, g.constant(x.clone()))?)?))
        }
        "bce_loss" => {
            let logits = store.add("logits", random(rng, b + 3, 1)).unwrap();
            let labels: Vec<f64> = (0..b + 3).map(|_| f64::from(rng.random_bool(0.4))).collect();
            Box::new(move |g, s| g.bce_mean(g.sigmoid(g.param(s, logits))?, &labels))
        }
        "cce_loss" => {
            let logits = store.add("logits", random(rng, b + 3, n)).unwrap();
            let classes: Vec<usize> = (0..b + 3).map(|_| rng.random_range(0..n)).collect();
            Box::new(move |g, s| g.cce_mean(g.param(s, logits), &classes))
        }
        other => panic!("unknown layer {other}"),
    };
    // move zero-initialized biases off the ReLU kink
    jitter(&mut store, rng, 0.1);
    (store, f)
}

#[test]
fn criterion_1_gradient_suite() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let layers = [
        "embedding",
        "cross",
        "deep",
        "ftt_tokenizer",
        "transformer_block",
        "gate",
        "expert_mix",
        "tower",
        "bce_loss",
        "cce_loss",
    ];
    let mut worst = (0.0f64, String::new());
    let mut instances = 0;
    for layer in layers {
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        for i in 0..20 {
            let (mut store, f) = layer_instance(layer, &mut rng);
            let r = check_params(&mut store, usize::MAX, &f).unwrap();
            assert!(r.checked > 0, "{layer}: nothing checked");
            if r.max_rel_error > worst.0 {
                worst = (r.max_rel_error, format!("{layer}#{i} {}[{}]", r.worst_param, r.worst_index));
            }
            instances += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst.0 < 1e-4 && secs < 60.0;
    report(
        1,
        ok,
        &format!("{instances} instances, max rel error {:.2e} at {}, {secs:.1}s", worst.0, worst.1),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_algebraic_identities() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cross_ok = true;
    let mut simplex_err = 0.0f64;
    let mut match_err = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..12);
        let h0: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let h: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        cross_ok &= cross_layer(&h0, &h, &Tensor::zeros(&[n, n]), &vec![0.0; n]).unwrap() == h;

        let k = rng.random_range(2..8);
        let w = normal_init(&mut rng, &[k, n], 3.0);
        let gates = gate_forward(&h, &w).unwrap();
        simplex_err = simplex_err.max((gates.iter().sum::<f64>() - 1.0).abs());
        assert!(gates.iter().all(|&p| p >= 0.0));

        let d = rng.random_range(1..64);
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum: f64 = match_cross(&q, &p).unwrap().iter().sum();
        let dot = match_dot(&q, &p).unwrap();
        match_err = match_err.max((sum - dot).abs() / dot.abs().max(1e-300));
    }
    // the graph-level cross stack with zeroed parameters is the identity too
    let mut store = ParamStore::new();
    let dcn = DcnBottom::new(&mut store, &mut rng, "dcn", 5, &DcnConfig { cross_layers: 3, deep_widths: vec![2] }).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let x0 = normal_init(&mut rng, &[4, 5], 1.0);
    let g = Graph::inference();
    let out = g.value(dcn.cross_forward(&g, &store, g.constant(x0.clone())).unwrap());
    cross_ok &= out == x0;

    let mut softmax_err = 0.0f64;
    for n in 1..=64 {
        let s = kernels::softmax(&Tensor::zeros(&[1, n])).unwrap();
        softmax_err = softmax_err.max(s.data().iter().map(|v| (v - 1.0 / n as f64).abs()).fold(0.0, f64::max));
    }
    let ok = cross_ok && simplex_err < 1e-9 && match_err < 1e-12 && softmax_err <= 1e-15;
    report(
        2,
        ok,
        &format!(
            "zero cross identity {cross_ok}, simplex err {simplex_err:.1e}, cross/dot rel err {match_err:.1e}, softmax err {softmax_err:.1e}"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 3

/// `ln(x)` by the atanh series, `x^1.5` as `x·sqrt(x)` by Newton.
fn oracle_position_weight(p: u32) -> f64 {
    let x = f64::from(p + 1);
    let y = (x - 1.0) / (x + 1.0);
    let (mut ln, mut term) = (0.0, y);
    for k in 0..4000 {
        ln += term / (2 * k + 1) as f64;
        term *= y * y;
    }
    ln *= 2.0;
    let mut r = ln;
    for _ in 0..100 {
        r = 0.5 * (r + ln / r);
    }
    ln * r
}

#[test]
fn criterion_3_formula_oracle() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let w1 = position_weight(1).unwrap();
    let w9 = position_weight(9).unwrap();
    let o1 = oracle_position_weight(1);
    let o9 = oracle_position_weight(9);
    let tw = transaction_weight(4, 1);

    let mut agg = ClickAggregate::new("q", "p", 0.0);
    agg.add_click(1).unwrap();
    agg.add_click(1).unwrap();
    agg.add_transaction(1).unwrap();
    while agg.impressions < 10 {
        agg.add_impression();
    }
    let wctr = weighted_ctr(&agg, PositionWeighting::PerEvent).unwrap();
    let wctr_oracle = 2.0 * o1 * 1.5 / 10.0;

    let ok = (w1 - 0.5771).abs() <= 5e-4
        && (w9 - 3.4941).abs() <= 5e-4
        && (w1 - o1).abs() <= 5e-4
        && (w9 - o9).abs() <= 5e-4
        && tw == 1.25
        && (wctr - 0.17312).abs() <= 1e-5
        && (wctr - wctr_oracle).abs() <= 1e-5;
    report(
        3,
        ok,
        &format!("pw(1)={w1:.6} (oracle {o1:.6}), pw(9)={w9:.6} (oracle {o9:.6}), tw(4,1)={tw}, wctr={wctr:.6}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 4

fn brute_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1.0 && yj == 0.0 {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn example(q: &str, p: &str, click: bool) -> EncodedExample {
    EncodedExample {
        query_id: q.into(),
        product_id: p.into(),
        customer_id: "u".into(),
        categorical: vec![],
        continuous: vec![],
        interaction: vec![],
        query_tokens: vec![],
        doc_tokens: vec![],
        labels: Labels {
            click: f64::from(click),
            atc: 0.0,
            trx: 0.0,
            relevance: None,
        },
    }
}

fn small_world(seed: u64, impressions: usize) -> SyntheticWorldConfig {
    SyntheticWorldConfig {
        queries: 150,
        products: 600,
        customers: 120,
        categories: 5,
        impressions,
        list_length: 16,
        seed,
        ..Default::default()
    }
}

fn small_experiment(dir: &Path, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "small".into(),
        seed,
        out_dir: dir.to_path_buf(),
        data: DataConfig {
            synthetic: Some(small_world(seed, 6000)),
            ..Default::default()
        },
        train: TrainConfig {
            epochs: 2,
            batch_size: 128,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Zeroes every weight that reads a user-specific input of a DCN model, so
/// the scores no longer depend on user features.
fn zero_user_weights(model: &mut Model, schema: &searchrank::datamodel::FeatureSchema) {
    let layout = model.network.x0_layout();
    let mut user: Vec<usize> = (0..schema.continuous.len()).filter(|&i| schema.continuous[i].user_specific).collect();
    let mut offset = layout.continuous + layout.matching + layout.interaction;
    for (i, &d) in layout.embeddings.iter().enumerate() {
        if schema.categorical[i].user_specific {
            user.extend(offset..offset + d);
        }
        offset += d;
    }
    let store = &mut model.store;
    let zero_cols = |store: &mut ParamStore, lin: &Linear| {
        let w = store.get_mut(lin.weight);
        let cols = lin.in_dim;
        for r in 0..lin.out_dim {
            for &c in &user {
                w.data_mut()[r * cols + c] = 0.0;
            }
        }
    };
    let Bottom::Dcn(dcn) = &model.network.bottom else { panic!("DCN expected") };
    for lin in &dcn.cross {
        zero_cols(store, lin);
        let n = lin.in_dim;
        let w = store.get_mut(lin.weight);
        for &r in &user {
            w.data_mut()[r * n..(r + 1) * n].fill(0.0);
        }
        if let Some(b) = lin.bias {
            for &r in &user {
                store.get_mut(b).data_mut()[r] = 0.0;
            }
        }
    }
    zero_cols(store, &dcn.deep.layers[0]);
    for e in &model.network.mmoe.experts {
        zero_cols(store, &e.layers[0]);
    }
    for h in &model.network.mmoe.heads {
        zero_cols(store, &h.gate);
    }
}

#[test]
fn criterion_4_metric_oracles() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut auc_err = 0.0f64;
    for _ in 0..20 {
        let scores: Vec<f64> = (0..200).map(|_| (rng.random::<f64>() * 30.0).floor()).collect();
        let labels: Vec<f64> = (0..200).map(|_| f64::from(rng.random_bool(0.3))).collect();
        auc_err = auc_err.max((auc_roc(&scores, &labels).unwrap().unwrap() - brute_auc(&scores, &labels)).abs());
    }

    let mut examples = Vec::new();
    for q in 0..500 {
        for p in 0..rng.random_range(1..15) {
            examples.push(example(&format!("q{q:03}"), &format!("p{p:02}"), rng.random_bool(0.2)));
        }
    }
    let scores: Vec<f64> = examples.iter().map(|_| (rng.random::<f64>() * 6.0).floor()).collect();
    let rankings = rank_all(&examples, &scores).unwrap();
    let relevant = relevant_sets(&examples, Task::Click).unwrap();
    let mut mrr_exact = rankings.len() == 500;
    for k in [1, 3, 5, 10] {
        let mut scan = 0.0;
        for (r, rel) in rankings.iter().zip(&relevant) {
            for (i, (p, _)) in r.items.iter().enumerate().take(k) {
                if rel.contains(p) {
                    scan += 1.0 / (i + 1) as f64;
                    break;
                }
            }
        }
        mrr_exact &= mrr_at_k(&rankings, &relevant, k).unwrap() == scan / 500.0;
    }

    // a real model with its user-feature weights zeroed
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_experiment(tmp.path(), 4);
    let data = prepare(&cfg, &mut RunLog::console()).unwrap();
    let mut model = Model::new(&data.schema, data.vocab.len(), &cfg.model_config(), cfg.seed).unwrap();
    jitter(&mut model.store, &mut rng, 0.1);
    let mut pd_cfg = cfg.clone();
    pd_cfg.eval.pd = MetricParams { k: 3, ..Default::default() };
    let pd_before = model_pd(&model, &data.test, &data.schema, &pd_cfg).unwrap().value;
    zero_user_weights(&mut model, &data.schema);
    let pd_zeroed = model_pd(&model, &data.test, &data.schema, &pd_cfg).unwrap().value;

    // two queries, top-3 overlaps 2/3 and 3/3
    let mut two = Vec::new();
    for p in 0..4 {
        let mut a = example("q0", &format!("p{p}"), false);
        let mut b = example("q1", &format!("p{p}"), false);
        a.continuous = vec![1.0];
        b.continuous = vec![1.0];
        two.push(a);
        two.push(b);
    }
    let schema: searchrank::datamodel::FeatureSchema = serde_json::from_value(serde_json::json!({
        "categorical": [],
        "continuous": [{"name": "customer.spend", "source": {"Customer": "spend"}, "mean": 0.0, "std": 1.0, "user_specific": true}],
        "interaction": [],
        "text_dim": 4
    }))
    .unwrap();
    let score = |e: &[EncodedExample]| -> Result<Vec<f64>> {
        Ok(e.iter()
            .map(|e| {
                let p: usize = e.product_id[1..].parse().unwrap();
                match (e.query_id.as_str(), e.continuous[0] != 0.0) {
                    ("q0", true) | ("q1", true) => [4.0, 3.0, 2.0, 1.0][p],
                    ("q0", false) => [4.0, 3.0, 1.0, 2.0][p],
                    _ => [2.0, 3.0, 4.0, 1.0][p],
                }
            })
            .collect())
    };
    let pd3 = pd_at_k(&score, &two, &schema, &MetricParams { k: 3, ..Default::default() }).unwrap().value;

    let ok = auc_err < 1e-12 && mrr_exact && pd_zeroed == 1.0 && (pd3 - 5.0 / 6.0).abs() < 1e-15;
    report(
        4,
        ok,
        &format!(
            "AUC err {auc_err:.1e}, MRR scan exact {mrr_exact}, PD@3 zeroed user weights {pd_zeroed} (before {pd_before:.4}), PD@3 two-query {pd3:.6}"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_sampling() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let world = SyntheticWorldConfig {
        categories: 10,
        impressions: 120_000,
        seed: 5,
        ..Default::default()
    };
    let ds = searchrank::harness::generate_synthetic_logs(&world).unwrap().dataset;
    let cfg = SamplingConfig {
        beta: 0.2,
        alpha_pos: 0.3,
        seed: 5,
        ..Default::default()
    };
    let (sampled, rep) = stratified_sample(&ds, &cfg).unwrap();
    let categories: BTreeSet<&str> = ds.products.values().map(|p| p.category.as_str()).collect();

    let mut size_exact = true;
    let mut worst_frac = 0.0f64;
    let mut large_bins = 0;
    for b in &rep.bins {
        if b.shortfall() == 0 {
            size_exact &= b.sampled() == (0.2 * b.impressions as f64).round() as usize;
        }
        if b.impressions >= 1000 && b.sampled() > 0 {
            large_bins += 1;
            let frac = b.sampled_pos as f64 / b.sampled() as f64;
            worst_frac = worst_frac.max((frac - 0.3).abs());
        }
    }
    let reconciles = rep.reconcile(ds.len()).is_ok() && rep.total_sampled() == sampled.len();
    let ok = ds.len() >= 100_000 && categories.len() == 10 && size_exact && worst_frac <= 0.02 && large_bins > 0 && reconciles;
    report(
        5,
        ok,
        &format!(
            "{} impressions, {} bins ({} with >= 1000), sizes exact {size_exact}, worst positive-fraction gap {worst_frac:.4}, shortfall {}, reconciles {reconciles}",
            ds.len(),
            rep.bins.len(),
            large_bins,
            rep.total_shortfall()
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_label_monotonicity() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = RelevanceConfig::default();
    struct Counts {
        clicks: Vec<u32>,
        trx: usize,
        impressions: u64,
        sem: f64,
    }
    let build = |counts: &[Counts]| -> Vec<ClickAggregate> {
        counts
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut a = ClickAggregate::new("q", format!("p{i}"), s.sem);
                for &c in &s.clicks {
                    a.add_click(c).unwrap();
                }
                for &c in &s.clicks[..s.trx] {
                    a.add_transaction(c).unwrap();
                }
                while a.impressions < s.impressions {
                    a.add_impression();
                }
                a
            })
            .collect()
    };
    let mut violations = 0;
    let mut class_violations = 0;
    let trials = 10_000;
    for _ in 0..trials {
        let n = rng.random_range(1..8);
        let mut counts: Vec<Counts> = (0..n)
            .map(|_| {
                let clicks: Vec<u32> = (0..rng.random_range(0..6)).map(|_| rng.random_range(1..40)).collect();
                Counts {
                    trx: rng.random_range(0..=clicks.len()),
                    impressions: clicks.len() as u64 + rng.random_range(1..15),
                    clicks,
                    sem: rng.random_range(-1.0..1.0),
                }
            })
            .collect();
        let t = rng.random_range(0..n);
        let before = label_aggregates(&build(&counts), &cfg).unwrap();
        for a in &before {
            for b in &before {
                if a.relevance_score < b.relevance_score && a.relevance_class > b.relevance_class {
                    class_violations += 1;
                }
            }
        }
        let base = before[t].relevance_score;
        if rng.random_bool(0.5) || counts[t].trx == counts[t].clicks.len() {
            counts[t].clicks.push(rng.random_range(1..40));
        } else {
            counts[t].trx += 1;
        }
        let after = label_aggregates(&build(&counts), &cfg).unwrap()[t].relevance_score;
        if after < base {
            violations += 1;
        }
    }
    // classes over a larger single query
    let scores: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
    let classes = discretize_labels(&scores, 5).unwrap();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    class_violations += order.windows(2).filter(|w| classes[w[0]] > classes[w[1]]).count();

    let ok = violations == 0 && class_violations == 0;
    report(
        6,
        ok,
        &format!("{trials} randomized aggregates: {violations} score decreases, {class_violations} class-order violations"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_end_to_end_desk_experiment() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        name: "mmoe-dcn-cross".into(),
        seed: 7,
        out_dir: tmp.path().to_path_buf(),
        data: DataConfig {
            synthetic: Some(SyntheticWorldConfig {
                seed: 7,
                ..Default::default()
            }),
            ..Default::default()
        },
        ..Default::default()
    };
    assert_eq!(cfg.model.matching, MatchingMode::Cross);
    let world = cfg.data.synthetic.as_ref().unwrap();
    assert_eq!((world.queries, world.products, world.impressions), (2000, 5000, 50_000));
    let start = Instant::now();
    let out = run_experiment(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mrr = out.evaluation.mrr[&Task::Click];
    let vs_pop = mrr / out.baselines.popularity;
    let vs_rnd = mrr / out.baselines.random;
    let ok = vs_pop >= 1.15 && vs_rnd >= 1.5 && secs < 600.0;
    report(
        7,
        ok,
        &format!(
            "click MRR@1 {mrr:.4} vs popularity {:.4} ({vs_pop:.2}x) and random {:.4} ({vs_rnd:.2}x) over {} sessions, {secs:.0}s",
            out.baselines.popularity, out.baselines.random, out.evaluation.sessions
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_ablation_harness() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let tmp = tempfile::tempdir().unwrap();
    let base = small_experiment(tmp.path(), 8);
    let res = ablate(&base).unwrap();

    let cells: BTreeSet<String> = res.rows.iter().map(|(v, _)| v.name()).collect();
    let deltas_ok = res.deltas.len() == 12 * 8
        && res.deltas.iter().filter(|d| d.change.is_some()).all(|d| d.formatted.ends_with("%)"));
    let census_ok = res.census.len() == 4 && res.census.iter().all(|c| c.holds());

    // independent count of one relevance gate and tower
    let m = base.model_config().mmoe;
    let mut analytic_ok = true;
    for (v, row) in res.rows.iter().filter(|(v, _)| v.relevance) {
        let cfg = v.apply(&base);
        let data = prepare(&cfg, &mut RunLog::console()).unwrap();
        let model = Model::new(&data.schema, data.vocab.len(), &cfg.model_config(), cfg.seed).unwrap();
        let in_dim = match &model.network.bottom {
            Bottom::Dcn(d) => d.out_dim(),
            Bottom::Ftt(f) => f.out_dim(),
        };
        let mut tower = 0;
        let mut prev = *m.expert_widths.last().unwrap();
        for &w in m.tower_widths.iter().chain(std::iter::once(&base.relevance.classes)) {
            tower += prev * w + w;
            prev = w;
        }
        let gate = in_dim * m.num_experts;
        let check = res.census.iter().find(|c| c.variant == v.name()).unwrap();
        analytic_ok &= check.added_gate_tower == gate + tower && row.parameters == check.census_on;
    }
    for f in ["ablation.csv", "deltas.csv", "census.csv"] {
        assert!(tmp.path().join(f).exists(), "missing {f}");
    }
    let ok = cells.len() == 8 && deltas_ok && census_ok && analytic_ok;
    let ex = res
        .deltas
        .iter()
        .find(|d| d.contrast == "semantic_off" && d.metric == "mrr_click" && d.variant == "nosem-cross-norel")
        .map(|d| d.formatted.clone())
        .unwrap_or_default();
    report(
        8,
        ok,
        &format!(
            "8 cells, {} delta rows (e.g. semantic off click MRR {ex}), census +gate+tower exact {census_ok}, analytic {analytic_ok}",
            res.deltas.len()
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_determinism() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let tmp = tempfile::tempdir().unwrap();
    let mut a = small_experiment(&tmp.path().join("a"), 9);
    a.relevance_task = true;
    a.sampling = Some(SamplingConfig::default());
    let mut b = a.clone();
    b.out_dir = tmp.path().join("b");
    run_experiment(&a).unwrap();
    run_experiment(&b).unwrap();
    let read = |c: &ExperimentConfig, f: &str| std::fs::read(c.out_dir.join(f)).unwrap();
    let metrics_same = read(&a, "metrics.json") == read(&b, "metrics.json");
    let checkpoint_same = read(&a, "checkpoint.json") == read(&b, "checkpoint.json");

    let mut g = small_experiment(&tmp.path().join("g1"), 9);
    g.grid.epochs = 1;
    let g1 = grid_search_weights(&g, 1.0).unwrap();
    g.out_dir = tmp.path().join("g2");
    let g2 = grid_search_weights(&g, 1.0).unwrap();
    let grid_same = g1 == g2;

    let mut shuffled: Vec<(String, f64)> = (0..20).map(|i| (format!("p{i:02}"), f64::from(i % 4))).collect();
    let sorted = RankedList::new("q", "u", shuffled.clone()).unwrap();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let rank_same = RankedList::new("q", "u", shuffled).unwrap() == sorted;

    let ok = metrics_same && checkpoint_same && grid_same && rank_same;
    report(
        9,
        ok,
        &format!(
            "metrics.json identical {metrics_same}, checkpoint identical {checkpoint_same}, grid best {:?} reproduced {grid_same}",
            g1.best_weights()
        ),
    );
    assert!(ok);
}
