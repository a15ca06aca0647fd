use qrwkv::model::{checkpoint, ModelConfig, Variant};
use qrwkv::tasks::{self, TaskName, TaskSpec};
use qrwkv::train::{self, TrainConfig};

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        n_embd: 8,
        n_layer: 1,
        n_intermediate: 16,
        n_head: 2,
        n_qubits: 2,
        q_depth: 1,
        ..ModelConfig::desk(variant)
    }
}

fn short_training(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        window: 16,
        ..TrainConfig::default()
    }
}

#[test]
fn oracle_suite_passes() {
    for c in qrwkv::verify::run_suite() {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn zero_epochs_reports_untrained_metrics() {
    for variant in Variant::ALL {
        let run = train::train_model(&tiny(variant), &short_training(0), &TaskSpec::new(TaskName::Square, 2), 2)
            .unwrap();
        let r = run.report;
        assert!(r.is_ok());
        assert!(r.mae.is_finite() && r.mae > 0.0);
        assert!(r.mse.is_finite() && r.mse > 0.0);
        assert!(r.epoch_losses.is_empty());
        assert_eq!(r.initial_train_mse, r.final_train_mse);
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let spec = TaskSpec::new(TaskName::Arma, 5);
    let a = train::train_model(&tiny(Variant::Quantum), &short_training(2), &spec, 5).unwrap();
    let b = train::train_model(&tiny(Variant::Quantum), &short_training(2), &spec, 5).unwrap();
    assert_eq!(a.report.mae.to_bits(), b.report.mae.to_bits());
    assert_eq!(a.report.mse.to_bits(), b.report.mse.to_bits());
    assert_eq!(a.report.epoch_losses, b.report.epoch_losses);
    assert_eq!(a.model.params().iter().count(), b.model.params().iter().count());
    for ((_, p), (_, q)) in a.model.params().iter().zip(b.model.params().iter()) {
        assert_eq!(p.value, q.value, "{}", p.name);
    }
}

#[test]
fn trained_model_survives_a_checkpoint() {
    let cfg = tiny(Variant::Quantum);
    let spec = TaskSpec::new(TaskName::Sine, 1);
    let run = train::train_model(&cfg, &short_training(2), &spec, 1).unwrap();
    let dir = std::env::temp_dir().join(format!("qrwkv-e2e-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.qrwkv");
    checkpoint::save(&run.model, &path).unwrap();
    let back = checkpoint::load(&path, &cfg).unwrap();
    let ds = tasks::make_dataset(tasks::generate(&spec).unwrap(), 0.8, 16).unwrap();
    assert_eq!(train::evaluate(&back, &ds).unwrap(), (run.report.mae, run.report.mse));
    assert!(checkpoint::load(&path, &tiny(Variant::Classical)).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn short_training_lowers_the_loss() {
    let spec = TaskSpec::new(TaskName::Sine, 3);
    let run = train::train_model(&tiny(Variant::Classical), &short_training(20), &spec, 3).unwrap();
    let r = run.report;
    assert!(r.final_train_mse < r.initial_train_mse, "{r:?}");
    assert!(r.epoch_losses.last().unwrap() < &r.epoch_losses[0]);
}
