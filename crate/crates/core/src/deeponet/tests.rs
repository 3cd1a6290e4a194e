use super::*;
use crate::autodiff::{AdamConfig, Tape, Tensor};
use crate::container::ContainerError;
use crate::field::RngStream;

fn small_cnn() -> ArchConfig {
    ArchConfig {
        branch_kind: BranchKind::Cnn,
        branch_input: vec![9, 9],
        branch_conv: vec![ConvSpec { channels: 3, kernel: 3, stride: 2 }],
        branch_fc: vec![6, 4],
        coord_dim: 2,
        trunk_fc: vec![5, 4],
        activation: Activation::default(),
        p: 4,
    }
}

fn small_fnn(sensors: usize) -> ArchConfig {
    ArchConfig {
        branch_kind: BranchKind::Fnn,
        branch_input: vec![sensors],
        branch_conv: vec![],
        branch_fc: vec![16, 8],
        coord_dim: 1,
        trunk_fc: vec![16, 8],
        activation: Activation::default(),
        p: 8,
    }
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

#[test]
fn init_is_seeded_and_bounded() {
    let arch = ArchConfig::default_cnn(32, 32, 2);
    let a = init_model(&arch, &mut RngStream::new(9)).unwrap();
    let b = init_model(&arch, &mut RngStream::new(9)).unwrap();
    assert_eq!(a, b);
    for (layer, w) in a.branch_layers().iter().chain(a.trunk_layers()).zip(a.params().iter().step_by(2)) {
        let (fi, fo) = layer.fans();
        let bound = (6.0 / (fi + fo) as f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }
    assert!(a.params().iter().skip(1).step_by(2).all(|b| b.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn zero_input_gives_zero_output() {
    let arch = small_fnn(10);
    let m = init_model(&arch, &mut RngStream::new(1)).unwrap();
    let coords = random_tensor(&[7, 1], 2);
    let pred = m.predict(&Tensor::zeros(&[3, 10]), &coords).unwrap();
    assert!(pred.data().iter().all(|&v| v == 0.0));
}

#[test]
fn unit_branch_returns_trunk() {
    let mut arch = small_fnn(5);
    arch.branch_fc = vec![4, 1];
    arch.trunk_fc = vec![4, 1];
    arch.p = 1;
    let m = init_model(&arch, &mut RngStream::new(3)).unwrap();
    let coords = random_tensor(&[6, 1], 4);
    let mut tape = Tape::new();
    let vars = m.register(&mut tape, |_| false);
    let c = tape.constant(coords.clone());
    let t = m.trunk_from(&mut tape, &vars, c, 0).unwrap();
    let ones = tape.constant(Tensor::full(&[1, 1], 1.0));
    let pred = combine(&mut tape, ones, t).unwrap();
    assert_eq!(tape.value(pred).data(), tape.value(t).data());
}

#[test]
fn doubling_branch_doubles_predictions() {
    let m = init_model(&small_cnn(), &mut RngStream::new(5)).unwrap();
    let mut tape = Tape::new();
    let vars = m.register(&mut tape, |_| false);
    let x = tape.constant(random_tensor(&[2, 9, 9], 6));
    let c = tape.constant(random_tensor(&[5, 2], 7));
    let fwd = m.forward(&mut tape, &vars, x, c).unwrap();
    let doubled = tape.scale(fwd.branch_out, 2.0);
    let p2 = combine(&mut tape, doubled, fwd.trunk_out).unwrap();
    for (a, b) in tape.value(fwd.pred).data().iter().zip(tape.value(p2).data()) {
        assert!((2.0 * a - b).abs() <= 1e-14 * b.abs().max(1.0));
    }
}

#[test]
fn staged_forward_matches_full() {
    let m = init_model(&small_cnn(), &mut RngStream::new(8)).unwrap();
    let inputs = random_tensor(&[3, 9, 9], 9);
    let coords = random_tensor(&[4, 2], 10);
    let full = m.predict(&inputs, &coords).unwrap();
    let mut tape = Tape::new();
    let vars = m.register(&mut tape, |_| false);
    let h = tape.constant(m.branch_features(&inputs, 1).unwrap());
    let b = m.branch_from(&mut tape, &vars, h, 1).unwrap();
    let t = tape.constant(m.trunk_features(&coords, 1).unwrap());
    let t = m.trunk_from(&mut tape, &vars, t, 1).unwrap();
    let pred = combine(&mut tape, b.out, t).unwrap();
    for (a, b) in full.data().iter().zip(tape.value(pred).data()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(b.x_b1.is_some());
}

#[test]
fn shape_mismatch_reported() {
    let m = init_model(&small_cnn(), &mut RngStream::new(1)).unwrap();
    let err = m.predict(&Tensor::zeros(&[2, 8, 9]), &Tensor::zeros(&[3, 2])).unwrap_err();
    assert!(matches!(err, DeepOnetError::ShapeMismatch(_)));
    let err = m.predict(&Tensor::zeros(&[2, 9, 9]), &Tensor::zeros(&[3, 3])).unwrap_err();
    assert!(matches!(err, DeepOnetError::ShapeMismatch(_)));
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut m = init_model(&small_cnn(), &mut RngStream::new(11)).unwrap();
    // Non-zero biases so that every path is exercised.
    for (i, p) in m.params_mut().iter_mut().enumerate() {
        if i % 2 == 1 {
            *p = random_tensor(p.shape(), 100 + i as u64);
        }
    }
    let inputs = random_tensor(&[2, 9, 9], 12);
    let coords = random_tensor(&[5, 2], 13);
    let mean_pred = |model: &DeepONet| {
        let p = model.predict(&inputs, &coords).unwrap();
        p.data().iter().sum::<f64>() / p.len() as f64
    };
    let mut tape = Tape::new();
    let vars = m.register(&mut tape, |_| true);
    let x = tape.constant(inputs.clone());
    let c = tape.constant(coords.clone());
    let fwd = m.forward(&mut tape, &vars, x, c).unwrap();
    let out = tape.mean(fwd.pred);
    let grads = tape.backward(out).unwrap();

    let mut rng = RngStream::new(14);
    let h = 1e-6;
    for _ in 0..10 {
        let ti = rng.index(m.params().len());
        let ei = rng.index(m.params()[ti].len());
        let analytic = grads.get(vars[ti]).data()[ei];
        let mut plus = m.clone();
        plus.params_mut()[ti].data_mut()[ei] += h;
        let mut minus = m.clone();
        minus.params_mut()[ti].data_mut()[ei] -= h;
        let numeric = (mean_pred(&plus) - mean_pred(&minus)) / (2.0 * h);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(err < 1e-4, "tensor {ti} entry {ei}: {analytic} vs {numeric}");
    }
}

#[test]
fn relative_l2_values() {
    let r = random_tensor(&[4, 3], 1);
    assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
    assert_eq!(relative_l2(&Tensor::zeros(&[4, 3]), &r).unwrap(), 1.0);
    let scaled = Tensor::new(vec![4, 3], r.data().iter().map(|v| 1.1 * v).collect()).unwrap();
    assert!((relative_l2(&scaled, &r).unwrap() - 0.1).abs() < 1e-12);
    assert!(matches!(relative_l2(&r, &Tensor::zeros(&[4, 3])), Err(DeepOnetError::ZeroReference)));
}

#[test]
fn relative_l2_gradient_matches_finite_differences() {
    let r = random_tensor(&[3, 2], 2);
    let p0 = random_tensor(&[3, 2], 3);
    let mut tape = Tape::new();
    let p = tape.param(p0.clone());
    let l = relative_l2_node(&mut tape, p, &r).unwrap();
    let g = tape.backward(l).unwrap().get(p);
    let h = 1e-6;
    for i in 0..p0.len() {
        let mut a = p0.clone();
        a.data_mut()[i] += h;
        let mut b = p0.clone();
        b.data_mut()[i] -= h;
        let num = (relative_l2(&a, &r).unwrap() - relative_l2(&b, &r).unwrap()) / (2.0 * h);
        assert!((num - g.data()[i]).abs() <= 1e-5 * num.abs().max(1e-3));
    }
}

/// Inputs on 12 sensors, target `y(ζ) = mean(x)` at every coordinate.
fn mean_operator_data(n: usize, seed: u64, role: DatasetRole) -> OperatorDataset {
    let mut rng = RngStream::new(seed);
    let sensors = 12;
    let d = 6;
    let mut xs = Vec::with_capacity(n * sensors);
    let mut ys = Vec::with_capacity(n * d);
    for _ in 0..n {
        let shift = rng.uniform_range(0.5, 1.5);
        let amp = rng.uniform_range(-0.5, 0.5);
        let x: Vec<f64> = (0..sensors).map(|i| shift + amp * (i as f64 / 3.0).sin()).collect();
        let mean = x.iter().sum::<f64>() / sensors as f64;
        xs.extend(x);
        ys.extend(std::iter::repeat_n(mean, d));
    }
    let coords = Tensor::new(vec![d, 1], (0..d).map(|j| j as f64 / (d - 1) as f64).collect()).unwrap();
    OperatorDataset::new(
        role,
        Tensor::new(vec![n, sensors], xs).unwrap(),
        coords,
        Some(Tensor::new(vec![n, d], ys).unwrap()),
    )
    .unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let data = mean_operator_data(10, 1, DatasetRole::SourceTrain);
    let mut m = init_model(&small_fnn(12), &mut RngStream::new(2)).unwrap();
    let before = m.clone();
    let cfg = TrainConfig { epochs: 1, batch_size: 4, adam: AdamConfig { lr: 0.0, ..AdamConfig::default() }, coord_batch: None };
    train_source(&mut m, &data, &cfg, &mut RngStream::new(3)).unwrap();
    assert_eq!(m, before);
}

#[test]
fn training_learns_mean_operator() {
    let train = mean_operator_data(50, 4, DatasetRole::SourceTrain);
    let test = mean_operator_data(20, 5, DatasetRole::SourceTest);
    let mut m = init_model(&small_fnn(12), &mut RngStream::new(6)).unwrap();
    let cfg = TrainConfig { epochs: 200, batch_size: 10, adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, coord_batch: None };
    let history = train_source(&mut m, &train, &cfg, &mut RngStream::new(7)).unwrap();
    assert_eq!(history.len(), 200);
    assert!(history.iter().all(|v| v.is_finite()));
    assert!(history[199] < history[0]);
    let pred = m.predict(&test.branch_inputs, &test.coords).unwrap();
    let err = relative_l2(&pred, test.outputs().unwrap()).unwrap();
    assert!(err < 0.05, "{err}");
}

#[test]
fn training_is_bit_reproducible() {
    let train = mean_operator_data(20, 8, DatasetRole::SourceTrain);
    let cfg = TrainConfig { epochs: 5, batch_size: 6, adam: AdamConfig::default(), coord_batch: Some(3) };
    let run = || {
        let mut m = init_model(&small_fnn(12), &mut RngStream::new(9)).unwrap();
        let h = train_source(&mut m, &train, &cfg, &mut RngStream::new(10)).unwrap();
        (checkpoint_file(&m).to_bytes().unwrap(), h)
    };
    assert_eq!(run(), run());
}

#[test]
fn training_rejects_wrong_role() {
    let data = mean_operator_data(5, 1, DatasetRole::TargetTest);
    let mut m = init_model(&small_fnn(12), &mut RngStream::new(2)).unwrap();
    assert!(train_source(&mut m, &data, &TrainConfig::default(), &mut RngStream::new(1)).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let arch = small_cnn();
    let m = init_model(&arch, &mut RngStream::new(21)).unwrap();
    let p1 = dir.path().join("a.tlon");
    let p2 = dir.path().join("b.tlon");
    save_checkpoint(&m, &p1).unwrap();
    let back = load_checkpoint(&p1, &arch).unwrap();
    save_checkpoint(&back, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let inputs = random_tensor(&[2, 9, 9], 22);
    let coords = random_tensor(&[3, 2], 23);
    let a = m.predict(&inputs, &coords).unwrap();
    let b = back.predict(&inputs, &coords).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let bytes = std::fs::read(&p1).unwrap();
    std::fs::write(&p2, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_checkpoint(&p2, &arch), Err(DeepOnetError::Container(ContainerError::Format(_)))));

    let mut other = arch.clone();
    other.branch_fc = vec![7, 4];
    assert!(matches!(load_checkpoint(&p1, &other), Err(DeepOnetError::ArchMismatch(_))));
}
