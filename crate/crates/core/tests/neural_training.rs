use arct_core::corpus::{DataSplit, TaskInstance};
use arct_core::neural::{
    accuracy_of, grad_check, mean_loss, predict, train, Dims, NeuralModel, TrainConfig, Variant,
};

fn fixture(n: usize) -> Vec<TaskInstance> {
    let words = [
        "milk", "drugs", "school", "tax", "guns", "votes", "cars", "trees", "rent", "music", "games", "books",
    ];
    (0..n)
        .map(|i| TaskInstance {
            instance_id: format!("i{i}"),
            warrant0: format!("{} is good for {}", words[i % 12], words[(i + 3) % 12]),
            warrant1: format!("{} is bad for {}", words[(i + 5) % 12], words[(i + 7) % 12]),
            label: (i % 2) as u8,
            reason: format!("because of {}", words[(i + 1) % 12]),
            claim: format!("{} should be allowed", words[(i + 2) % 12]),
            debate_title: "a debate".into(),
            debate_info: "some description".into(),
            debate_id: "d".into(),
        })
        .collect()
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        dropout_rate: 0.0,
        patience_epochs: 200,
        max_epochs: 200,
        runs: 1,
        seed: 7,
        learning_rate: 0.01,
        batch_size: 4,
        dims: Dims::new(16, 16),
        ..Default::default()
    }
}

#[test]
fn overfits_ten_instances() {
    let data = fixture(10);
    let split = DataSplit {
        train: data.clone(),
        dev: data.clone(),
        test: vec![],
    };
    let (model, history) = train(&split, &overfit_config(), Variant { intra_warrant: true, with_context: true }, None).unwrap();
    assert!(history.len() <= 200);
    let acc = predict(&model, &data)
        .unwrap()
        .iter()
        .zip(&data)
        .filter(|(p, i)| **p == i.label)
        .count();
    assert_eq!(acc, 10, "history tail: {:?}", history.last());
    // loss decreases over the first five epochs
    for w in history[..5].windows(2) {
        assert!(w[1].train_loss < w[0].train_loss, "{history:?}");
    }
}

#[test]
fn training_is_deterministic_and_inference_is_repeatable() {
    let data = fixture(6);
    let split = DataSplit {
        train: data.clone(),
        dev: data.clone(),
        test: vec![],
    };
    let cfg = TrainConfig {
        max_epochs: 3,
        dropout_rate: 0.5,
        ..overfit_config()
    };
    let v = Variant { intra_warrant: false, with_context: false };
    let (a, ha) = train(&split, &cfg, v, None).unwrap();
    let (b, hb) = train(&split, &cfg, v, None).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ha, hb);
    assert_eq!(predict(&a, &data).unwrap(), predict(&a, &data).unwrap());
    assert!(mean_loss(&a, &data).unwrap().is_finite());
}

#[test]
fn early_stopping_respects_patience() {
    let data = fixture(6);
    let split = DataSplit {
        train: data.clone(),
        dev: data[..2].to_vec(),
        test: vec![],
    };
    let cfg = TrainConfig {
        patience_epochs: 2,
        max_epochs: 100,
        ..overfit_config()
    };
    let (model, history) = train(&split, &cfg, Variant { intra_warrant: false, with_context: false }, None).unwrap();
    let best = history.iter().map(|h| h.dev_acc).fold(0.0, f64::max);
    let first_best = history.iter().position(|h| h.dev_acc == best).unwrap();
    assert!(history.len() <= first_best + 1 + 2);
    let dev = split.dev.iter().map(|i| model.encode(i).unwrap()).collect::<Vec<_>>();
    assert_eq!(accuracy_of(&model, &dev), best);
}

#[test]
fn grad_check_acceptance_dims() {
    let inst = fixture(1).remove(0);
    let split = DataSplit {
        train: vec![inst.clone()],
        dev: vec![inst.clone()],
        test: vec![],
    };
    let v = Variant { intra_warrant: true, with_context: true };
    let vocab = arct_core::neural::build_vocab(&split, v, None);
    let mut model = NeuralModel::new(v, Dims::new(8, 4), vocab, 1);
    model.randomize(21, 0.5);
    let check = grad_check(&model, &inst, 1e-4).unwrap();
    assert!(check.max_relative_error < 1e-4, "{check:?}");
    assert!(check.checked >= 50);
    eprintln!("grad check: {check:?}");
}
