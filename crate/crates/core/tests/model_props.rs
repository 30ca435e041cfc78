use smrep::analysis::encode_samples;
use smrep::data::{generate_samples, TrainingSample};
use smrep::env::EnvConfig;
use smrep::model::{Architecture, TrainConfig, Trainer};

fn same_truth(a: &TrainingSample, b: &TrainingSample) -> bool {
    (a.truth.dlong - b.truth.dlong).abs() < 1e-9
        && (a.truth.dlat - b.truth.dlat).abs() < 1e-9
        && (a.truth.dtheta - b.truth.dtheta).abs() < 1e-9
}

/// After brief training with the inverse model, different command sequences
/// with the same displacement encode closer together than sequences with
/// different displacements.
#[test]
fn equal_displacements_encode_closer_on_lattice() {
    let env = EnvConfig::lattice();
    let config = TrainConfig {
        horizon: 2,
        epochs: 40,
        trajectories_per_epoch: 1000,
        batch_size: 50,
        seed: 17,
        eval_trajectories: 100,
        eval_every: 40,
        inverse_model_enabled: true,
        arch: Architecture {
            lstm_hidden: 24,
            repr_dim: 12,
            predictor_hidden: 48,
            predictor_layers: 2,
            inverse_hidden: 32,
            inverse_layers: 2,
            forget_bias: 1.0,
        },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(env.clone(), config).unwrap();
    trainer.run(|_, _| Ok(())).unwrap();
    let samples = generate_samples(&env, 2, 400, 99).unwrap();
    let h = encode_samples(&trainer.model, &samples).unwrap();
    let dist = |i: usize, j: usize| -> f64 {
        h.row(i).iter().zip(h.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let (mut same, mut n_same, mut diff, mut n_diff) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            if samples[i].commands == samples[j].commands {
                continue;
            }
            if same_truth(&samples[i], &samples[j]) {
                same += dist(i, j);
                n_same += 1;
            } else {
                diff += dist(i, j);
                n_diff += 1;
            }
        }
    }
    assert!(n_same > 0 && n_diff > 0);
    let (same, diff) = (same / n_same as f64, diff / n_diff as f64);
    assert!(same < diff, "equal displacements {same:.4} vs different {diff:.4}");
}
