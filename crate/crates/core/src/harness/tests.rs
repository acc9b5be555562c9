use super::grid::best_point;
use super::run::flush_partial;
use super::*;
use crate::buffer::{BufferSnapshot, SnapshotSample};
use crate::methods::Method;

fn synth(separation: f64) -> DatasetRef {
    DatasetRef::Synthetic {
        classes: 10,
        per_class: 60,
        dim: 16,
        separation,
        seed: 4,
    }
}

fn config(method: Method, protocol: ProtocolId) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        synth(0.6),
        protocol,
        MethodConfig {
            epochs: 2,
            batch_size: 20,
            buffer_size: 60,
            learning_rate: 0.05,
            seed: 11,
            ..MethodConfig::new(method)
        },
    );
    cfg.backend = Backend::Hidden(vec![32]);
    cfg
}

#[test]
fn config_json_round_trip_and_validation() {
    let cfg = config(Method::Gem, ProtocolId::D5_2);
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);

    let minimal = r#"{"dataset": {"kind": "idx", "path": "data/mnist"}, "protocol": "D5_2"}"#;
    let c = ExperimentConfig::from_json(minimal).unwrap();
    assert_eq!((c.replications, c.backend.clone(), c.method.method), (1, Backend::Dnn100, Method::Nsr));

    for bad in [
        r#"{"dataset": {"kind": "idx", "path": "x"}, "protocol": "D5_2", "epoch": 3}"#,
        r#"{"dataset": {"kind": "idx", "path": "x"}, "protocol": "Custom"}"#,
        r#"{"dataset": {"kind": "idx", "path": "x"}, "protocol": "D5_2", "replications": 0}"#,
        r#"{"dataset": {"kind": "idx", "path": "x"}, "protocol": "D5_2", "method": {"epochs": 0}}"#,
        r#"{"dataset": {"kind": "idx", "path": "x"}, "protocol": "D9_9"}"#,
    ] {
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn hash_names_the_result_determining_settings() {
    let cfg = config(Method::Nsr, ProtocolId::D5_2);
    let h = cfg.hash();
    assert_eq!(h.len(), 16);
    assert_eq!(h, cfg.clone().hash());
    let mut moved = cfg.clone();
    moved.output = Some("elsewhere".into());
    moved.exec = ExecMode::Sequential;
    moved.replications = 5;
    assert_eq!(moved.hash(), h);
    assert_ne!(cfg.replication(1).hash(), h);
    assert_eq!(cfg.replication(0).hash(), h);
    let mut lr = cfg;
    lr.method.learning_rate = 0.051;
    assert_ne!(lr.hash(), h);
}

#[test]
fn same_seed_gives_identical_results() {
    let cfg = config(Method::Nsr, ProtocolId::D5_2);
    let data = cfg.dataset.load().unwrap();
    let a = run_experiment(&cfg, &data).unwrap();
    let b = run_experiment(&cfg, &data).unwrap();
    assert!(a.same_outcome(&b));
    assert_eq!(a.config_hash, cfg.hash());
    assert_eq!(a.matrix.as_ref().unwrap().rows().len(), 6);
    assert!(a.raw_buffer_accuracy.is_some());
    assert_eq!(a.buffer_len, 60);
}

#[test]
fn sequential_and_parallel_evaluation_agree() {
    let mut cfg = config(Method::Tem, ProtocolId::D5_2);
    let data = cfg.dataset.load().unwrap();
    cfg.exec = ExecMode::Sequential;
    let a = run_experiment(&cfg, &data).unwrap();
    cfg.exec = ExecMode::Parallel;
    let b = run_experiment(&cfg, &data).unwrap();
    assert!(a.same_outcome(&b));
}

#[test]
fn capacity_zero_equals_raw_task() {
    let data = synth(0.6).load().unwrap();
    for m in Method::ALL {
        let mut cfg = config(m, ProtocolId::D5_2);
        cfg.method.buffer_size = 0;
        let run = run_experiment(&cfg, &data).unwrap();
        let rt = run_raw_task(&cfg, &data).unwrap();
        assert_eq!(run.matrix, rt.matrix, "{m}");
        assert_eq!(run.raw_buffer_accuracy, None);
    }
}

#[test]
fn single_subtask_raw_task_is_joint_training() {
    let cfg = config(Method::Nsr, ProtocolId::D1_10);
    let data = cfg.dataset.load().unwrap();
    let rt = run_raw_task(&cfg, &data).unwrap();
    let jt = run_joint_training(&cfg, &data).unwrap();
    assert_eq!(rt.task_accuracies, jt.task_accuracies);
    assert_eq!(rt.final_accuracy, jt.final_accuracy);
    assert!(jt.final_accuracy > 0.9);
}

#[test]
fn joint_training_beats_raw_sequential() {
    let cfg = config(Method::Nsr, ProtocolId::D5_2);
    let data = cfg.dataset.load().unwrap();
    let rt = run_raw_task(&cfg, &data).unwrap();
    let jt = run_joint_training(&cfg, &data).unwrap();
    assert!(jt.final_accuracy > rt.final_accuracy + 0.3, "{} vs {}", jt.final_accuracy, rt.final_accuracy);
    assert_eq!(jt.task_accuracies.len(), 5);
    // the last sub-task is all a naive learner remembers
    assert!(rt.task_accuracies[..4].iter().all(|&a| a < 0.2));
}

#[test]
fn unlearnable_data_stays_at_chance() {
    let mut cfg = config(Method::Nsr, ProtocolId::D1_10);
    cfg.dataset = synth(0.0);
    let data = cfg.dataset.load().unwrap();
    let jt = run_joint_training(&cfg, &data).unwrap();
    assert!((jt.final_accuracy - 0.1).abs() < 0.06, "{}", jt.final_accuracy);
}

#[test]
fn per_batch_cadence_keeps_boundary_rows() {
    let data = synth(0.6).load().unwrap();
    for m in [Method::Nsr, Method::Icarl, Method::Gbss] {
        let coarse = config(m, ProtocolId::D5_2);
        let mut fine = coarse.clone();
        fine.cadence = Cadence::PerBatch;
        let a = run_experiment(&coarse, &data).unwrap();
        let b = run_experiment(&fine, &data).unwrap();
        let trace = b.trace.as_ref().unwrap();
        assert!(trace.rows.len() > 6);
        let boundary_rows: Vec<Vec<f64>> = trace.boundaries.iter().map(|&i| trace.rows[i].clone()).collect();
        assert_eq!(boundary_rows, a.matrix.as_ref().unwrap().rows());
        assert_eq!(a.matrix, b.matrix);
    }
}

#[test]
fn replication_aggregates_seeds() {
    let mut cfg = config(Method::Tem, ProtocolId::D5_2);
    cfg.replications = 3;
    let data = cfg.dataset.load().unwrap();
    let (runs, agg) = replicate(&cfg, &data, RunKind::Method).unwrap();
    assert_eq!(runs.iter().map(RunResult::seed).collect::<Vec<_>>(), vec![11, 12, 13]);
    assert!(runs[1].same_outcome(&run_experiment(&cfg.replication(1), &data).unwrap()));
    let acc: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
    let mean = (acc[0] + acc[1] + acc[2]) / 3.0;
    let var = acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 2.0;
    assert!((agg.final_accuracy.mean - mean).abs() < 1e-15);
    assert!((agg.final_accuracy.std - var.sqrt()).abs() < 1e-15);
    assert_eq!(agg.runs, 3);
    assert!(agg.raw_buffer_accuracy.is_some());
    assert!(replicate(&cfg, &data, RunKind::RawBuffer).is_err());
}

fn snapshot_of(data: &Dataset, keep: impl Fn(usize) -> bool) -> BufferSnapshot {
    BufferSnapshot {
        samples: (0..data.train.len())
            .filter(|&i| keep(data.train.labels[i]))
            .map(|i| SnapshotSample {
                features: data.train.features.row(i).to_vec(),
                label: data.train.labels[i],
                origin: crate::buffer::Origin::Real,
                score: None,
            })
            .collect(),
    }
}

#[test]
fn raw_buffer_baseline() {
    let mut cfg = config(Method::Nsr, ProtocolId::D5_2);
    // long enough that the result no longer depends on the seed
    cfg.method.epochs = 10;
    let data = cfg.dataset.load().unwrap();
    assert!(matches!(
        run_raw_buffer(&cfg, &data, &BufferSnapshot::default()),
        Err(Error::Baseline(_))
    ));

    let everything = run_raw_buffer(&cfg, &data, &snapshot_of(&data, |_| true)).unwrap();
    let jt = run_joint_training(&cfg, &data).unwrap();
    assert!((everything.final_accuracy - jt.final_accuracy).abs() < 0.03, "{} vs {}", everything.final_accuracy, jt.final_accuracy);

    let one_class = run_raw_buffer(&cfg, &data, &snapshot_of(&data, |l| l == 3)).unwrap();
    assert!((one_class.final_accuracy - 0.1).abs() < 1e-12);
    assert_eq!(one_class.kind, RunKind::RawBuffer);
}

#[test]
fn raw_buffer_only_sees_the_snapshot() {
    let cfg = config(Method::Nsr, ProtocolId::D5_2);
    let data = cfg.dataset.load().unwrap();
    let run = run_experiment(&cfg, &data).unwrap();
    let rb = run_raw_buffer(&cfg, &data, run.snapshot.as_ref().unwrap()).unwrap();
    assert_eq!(Some(rb.final_accuracy), run.raw_buffer_accuracy);
}

#[test]
fn grid_points_and_errors() {
    let base = config(Method::Gem, ProtocolId::D5_2);
    let grid: Grid = serde_json::from_str(r#"{"epochs": [1, 3, 5], "memory_strength": [0.25, 0.5]}"#).unwrap();
    let points = grid.points(&base).unwrap();
    assert_eq!(points.len(), 6);
    assert_eq!(
        points.iter().map(|p| (p.method.epochs, p.method.memory_strength)).collect::<Vec<_>>(),
        vec![(1, 0.25), (1, 0.5), (3, 0.25), (3, 0.5), (5, 0.25), (5, 0.5)]
    );
    for bad in [r#"{}"#, r#"{"epochs": []}"#, r#"{"epochz": [1]}"#, r#"{"iterations": [1, 3]}"#, r#"{"epochs": ["x"]}"#] {
        let grid: Grid = serde_json::from_str(bad).unwrap();
        assert!(matches!(grid.points(&base), Err(Error::Config(_))), "{bad}");
    }
    let doc = r#"{"dataset": {"kind": "idx", "path": "x"}, "protocol": "D5_2", "grid": {"learning_rate": [0.1, 0.01]}}"#;
    let (b, g) = Grid::from_config_json(doc).unwrap();
    assert_eq!(b.protocol, ProtocolId::D5_2);
    assert_eq!(g.size(), 2);
    assert!(Grid::from_config_json(r#"{"dataset": {"kind": "idx", "path": "x"}, "protocol": "D5_2"}"#).is_err());
}

#[test]
fn best_point_prefers_accuracy_then_lower_hash() {
    let s = |v: &[(&str, f64)]| v.iter().map(|(h, a)| (h.to_string(), *a)).collect::<Vec<_>>();
    assert_eq!(best_point(&s(&[("b", 0.5), ("a", 0.7), ("c", 0.6)])), Some(1));
    assert_eq!(best_point(&s(&[("c", 0.7), ("a", 0.7), ("b", 0.7)])), Some(1));
    assert_eq!(best_point(&[]), None);
}

#[test]
fn grid_search_flags_the_best_point() {
    let mut base = config(Method::Nsr, ProtocolId::D5_2);
    base.replications = 2;
    base.raw_buffer = false;
    let data = base.dataset.load().unwrap();
    let grid: Grid = serde_json::from_str(r#"{"learning_rate": [0.001, 0.05]}"#).unwrap();
    let results = grid_search(&base, &grid, &data).unwrap();
    assert_eq!(results.len(), 4);
    let hashes: Vec<&String> = results.iter().map(|r| &r.config_hash).collect();
    assert!(hashes.windows(2).all(|w| w[0] <= w[1]));
    let mean = |lr: f64| {
        let v: Vec<f64> = results.iter().filter(|r| r.config.method.learning_rate == lr).map(|r| r.final_accuracy).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let winner = if mean(0.05) >= mean(0.001) { 0.05 } else { 0.001 };
    for r in &results {
        assert_eq!(r.best, r.config.method.learning_rate == winner);
    }

    let single: Grid = serde_json::from_str(r#"{"learning_rate": [0.05]}"#).unwrap();
    base.replications = 1;
    let one = grid_search(&base, &single, &data).unwrap();
    assert_eq!(one.len(), 1);
    assert!(one[0].best);
    let mut direct = run_experiment(&base, &data).unwrap();
    direct.best = true;
    assert!(one[0].same_outcome(&direct));
}

#[test]
fn report_files_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Method::Nsr, ProtocolId::D5_2);
    let data = cfg.dataset.load().unwrap();
    let run = run_experiment(&cfg, &data).unwrap();
    let files = emit_report(std::slice::from_ref(&run), dir.path()).unwrap();
    let find = |suffix: &str| files.iter().find(|p| p.to_string_lossy().ends_with(suffix)).unwrap().clone();
    let r_csv = std::fs::read_to_string(find("_R.csv")).unwrap();
    assert_eq!(r_csv.lines().count(), 1 + 6);
    let back: RunResult = serde_json::from_str(&std::fs::read_to_string(find(".json")).unwrap()).unwrap();
    assert_eq!(back.metrics, run.metrics);
    assert_eq!(back.matrix, run.matrix);
    assert_eq!(back.final_accuracy.to_bits(), run.final_accuracy.to_bits());
    let buffer = dir.path().join(back.buffer_snapshot.unwrap());
    assert_eq!(Some(BufferSnapshot::read(&buffer).unwrap()), run.snapshot);
    assert!(emit_report(&[], dir.path()).is_err());
}

#[test]
fn summary_has_one_row_per_method_and_task() {
    let data = synth(0.6).load().unwrap();
    let mut results = Vec::new();
    for m in [Method::Nsr, Method::Gem] {
        for p in [ProtocolId::D5_2, ProtocolId::D10_1] {
            let mut cfg = config(m, p);
            cfg.replications = 2;
            cfg.raw_buffer = false;
            cfg.method.epochs = 1;
            results.extend(replicate(&cfg, &data, RunKind::Method).unwrap().0);
        }
    }
    let rows = summary_table(&results);
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.runs == 2 && r.final_forgetting.is_some() && r.forward_transfer_mean.is_some()));
    let nsr_d5 = rows.iter().find(|r| r.method == "NSR" && r.protocol == "D5_2").unwrap();
    let own: Vec<f64> = results
        .iter()
        .filter(|r| r.config.method.method == Method::Nsr && r.config.protocol == ProtocolId::D5_2)
        .map(|r| r.final_accuracy)
        .collect();
    assert_eq!(nsr_d5.final_accuracy.mean, (own[0] + own[1]) / 2.0);
    let text = format_summary(&rows);
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().next().unwrap().contains("A_T"));

    let dir = tempfile::tempdir().unwrap();
    emit_report(&results, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().next().unwrap().starts_with("dataset,protocol,method,kind,setting,params,runs,best,A_T_mean"));
}

#[test]
fn failed_runs_flush_partial_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Method::Nsr, ProtocolId::D5_2);
    cfg.output = Some(dir.path().join("out"));
    let err = flush_partial(&cfg, RunKind::Method, &[vec![0.1; 5], vec![0.9, 0.0, 0.0, 0.0, 0.0]], Error::Precondition("boom".into()));
    assert!(matches!(err, Error::Precondition(_)));
    let entries: Vec<_> = std::fs::read_dir(dir.path().join("out")).unwrap().collect();
    assert_eq!(entries.len(), 1);
    let text = std::fs::read_to_string(entries[0].as_ref().unwrap().path()).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let d = DatasetRef::Idx {
        path: "/nonexistent/mnist".into(),
        subsample: None,
    };
    let err = d.load().unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
