mod common;

use common::{connected_er_graph, data};
use motif_energy::eval::{
    balanced_accuracy, logistic_fit, run_eval, test_balanced_accuracy, EmbeddingSource, EmbeddingTable, EvalConfig,
    KSetTask, Split,
};
use motif_energy::nce::{nce_energy_grad, nce_loss, nce_response};
use motif_energy::sample::{forest_fire_sample, make_noise, NoiseMode};
use motif_energy::synth::{planted_hyperedge_task, SynthConfig};
use motif_energy::train::{train, write_log, TrainConfig};
use motif_energy::model::ModelDims;
use proptest::prelude::*;
use serde_json::Value;

fn logistic_fixture() -> (EmbeddingTable, KSetTask, Value) {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(data("logistic.json")).unwrap()).unwrap();
    let rows: Vec<Vec<f64>> = serde_json::from_value(doc["rows"].clone()).unwrap();
    let task = KSetTask::load(&data("logistic_task.txt")).unwrap();
    let table = EmbeddingTable { d: rows[0].len(), rows, source: EmbeddingSource::PooledExternal };
    (table, task, doc)
}

#[test]
fn logistic_fit_matches_reference_solver() {
    let (table, task, doc) = logistic_fixture();
    let lambda = doc["reg_lambda"].as_f64().unwrap();
    let clf = logistic_fit(&table, &task, lambda, 0).unwrap();
    assert!(clf.converged);
    assert_eq!(clf.classes, vec![0, 1, 2]);
    let w: Vec<f64> = serde_json::from_value(doc["weights"].clone()).unwrap();
    let b: Vec<f64> = serde_json::from_value(doc["bias"].clone()).unwrap();
    let mean_b = clf.bias.iter().sum::<f64>() / 3.0;
    // the fit stops at gradient norm 1e-6, so parameters agree only to about
    // 1e-6 over the smallest curvature while the objective agrees to ~1e-12
    for (x, y) in clf.weights.iter().zip(&w) {
        assert!((x - y).abs() < 1e-4, "{x} vs {y}");
    }
    for (x, y) in clf.bias.iter().zip(&b) {
        assert!((x - mean_b - y).abs() < 1e-4, "bias {} vs {y}", x - mean_b);
    }
    let objective = |w: &[f64], b: &[f64]| {
        let train: Vec<_> = table.rows.iter().zip(&task.examples).filter(|(_, e)| e.split == Split::Train).collect();
        let ce: f64 = train
            .iter()
            .map(|(x, e)| {
                let s: Vec<f64> = (0..3).map(|c| b[c] + (0..4).map(|j| w[c * 4 + j] * x[j]).sum::<f64>()).collect();
                let lse = s.iter().map(|v| v.exp()).sum::<f64>().ln();
                lse - s[e.label as usize]
            })
            .sum();
        ce / train.len() as f64 + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
    };
    let reference = doc["objective"].as_f64().unwrap();
    assert!((objective(&w, &b) - reference).abs() < 1e-12);
    assert!((objective(&clf.weights, &clf.bias) - reference).abs() < 1e-10);
}

#[test]
fn logistic_fit_ignores_example_order_and_seed() {
    let (table, task, _) = logistic_fixture();
    let a = logistic_fit(&table, &task, 0.05, 0).unwrap();
    let mut order: Vec<usize> = (0..task.examples.len()).collect();
    order.reverse();
    let shuffled = KSetTask { examples: order.iter().map(|&i| task.examples[i].clone()).collect(), ..task.clone() };
    let rows = EmbeddingTable { rows: order.iter().map(|&i| table.rows[i].clone()).collect(), ..table.clone() };
    let b = logistic_fit(&rows, &shuffled, 0.05, 0).unwrap();
    assert_eq!(a.weights, b.weights);
    let c = logistic_fit(&table, &task, 0.05, 3).unwrap();
    for (x, y) in a.weights.iter().zip(&c.weights) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn eval_report_over_seeds() {
    let (table, task, _) = logistic_fixture();
    let report = run_eval(&table, &task, &EvalConfig::default()).unwrap();
    assert_eq!(report.per_seed.len(), 5);
    assert!(report.mean > 0.5 && report.std < 1e-3);
}

#[test]
fn balanced_accuracy_by_hand() {
    // class 0 recall 2/3, class 1 recall 1/1
    assert_eq!(balanced_accuracy(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap(), (2.0 / 3.0 + 1.0) / 2.0);
    assert_eq!(balanced_accuracy(&[1, 1, 1], &[1, 1, 1]).unwrap(), 1.0);
    assert!(balanced_accuracy(&[], &[]).is_err());
}

#[test]
fn class_missing_from_test_split_rejected() {
    let (table, mut task, _) = logistic_fixture();
    for e in &mut task.examples {
        if e.label == 2 {
            e.split = Split::Train;
        }
    }
    assert!(test_balanced_accuracy(&table, &task, 0.05, 0).is_err());
}

#[test]
fn task_file_round_trips() {
    let cfg = SynthConfig { n: 120, hyperedges: 10, decoys: 10, random_negatives: 10, ..SynthConfig::default() };
    let (_, task) = planted_hyperedge_task(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("task.txt");
    std::fs::write(&path, task.to_text(Some("g.edges"), None)).unwrap();
    let back = KSetTask::load(&path).unwrap();
    assert_eq!(back.examples, task.examples);
    assert_eq!(back.graph_ref, Some(dir.path().join("g.edges")));
}

#[test]
fn nce_derivative_signs() {
    // raising a positive's energy never lowers the loss; raising a noise graph's never raises it
    for phi in [-3.0, 0.0, 2.5] {
        let y = nce_response(phi, 0.0);
        assert!(nce_energy_grad(y, true) >= 0.0);
        assert!(nce_energy_grad(y, false) <= 0.0);
        let h = 1e-6;
        let fd_pos = (nce_loss(&[nce_response(phi + h, 0.0)], &[]) - nce_loss(&[nce_response(phi - h, 0.0)], &[])) / (2.0 * h);
        let fd_neg = (nce_loss(&[], &[nce_response(phi + h, 0.0)]) - nce_loss(&[], &[nce_response(phi - h, 0.0)])) / (2.0 * h);
        assert!((fd_pos - nce_energy_grad(y, true)).abs() < 1e-6);
        assert!((fd_neg - nce_energy_grad(y, false)).abs() < 1e-6);
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        q: 4,
        supernode_budget: 20,
        minibatch: 4,
        epochs: 2,
        sample_size: Some(20),
        samples: 6,
        dims: ModelDims { p: 0, d_gnn: 4, d_hidden: 4, d_rep: 8, h: 2, gnn_layers: 1 },
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_logs_each_epoch() {
    let g = connected_er_graph(60, 0.08, 2, 1);
    let a = train(std::slice::from_ref(&g), &tiny_config()).unwrap();
    let b = train(&[g], &tiny_config()).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.log.len(), 2);
    assert!(a.log.iter().all(|l| l.loss.is_finite()));
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_log(&a.log, &pa, false).unwrap();
    write_log(&b.log, &pb, false).unwrap();
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
}

#[test]
fn training_result_independent_of_thread_count() {
    let g = connected_er_graph(60, 0.08, 2, 2);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(std::slice::from_ref(&g), &tiny_config()).unwrap())
    };
    assert_eq!(run(1).model.params(), run(4).model.params());
}

#[test]
fn invalid_config_names_field() {
    let cfg = TrainConfig { minibatch: 0, ..tiny_config() };
    let err = train(&[connected_er_graph(20, 0.2, 0, 0)], &cfg).unwrap_err();
    assert!(err.to_string().contains("minibatch"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forest_fire_returns_induced_subgraph(seed in 0u64..500, target in 1usize..40) {
        let g = common::er_graph(40, 0.1, 1, seed);
        let s = forest_fire_sample(&g, target, 0.7, &mut common::rng(seed)).unwrap();
        prop_assert!(s.n() >= target);
        for (u, v) in s.edges() {
            let (a, b) = (g.index_of(s.label(u)).unwrap(), g.index_of(s.label(v)).unwrap());
            prop_assert!(g.has_edge(a, b));
        }
        let mut count = 0;
        for u in 0..s.n() {
            for v in u + 1..s.n() {
                let (a, b) = (g.index_of(s.label(u)).unwrap(), g.index_of(s.label(v)).unwrap());
                count += g.has_edge(a, b) as usize;
            }
        }
        prop_assert_eq!(count, s.edge_count());
    }

    #[test]
    fn noise_preserves_what_it_should(seed in 0u64..500) {
        let g = common::er_graph(30, 0.1, 2, seed);
        let shuffled = make_noise(&g, NoiseMode::ShuffleFeatures, &mut common::rng(seed)).unwrap();
        prop_assert_eq!(shuffled.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
        let mut a: Vec<f64> = g.feature_matrix().to_vec();
        let mut b: Vec<f64> = shuffled.feature_matrix().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        let added = make_noise(&g, NoiseMode::AddEdges, &mut common::rng(seed)).unwrap();
        prop_assert_eq!(added.edge_count(), g.edge_count() + g.n());
        prop_assert!(g.edges().all(|(u, v)| added.has_edge(u, v)));
    }
}
