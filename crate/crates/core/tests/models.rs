use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vickd::models::*;
use vickd_tensor::check::max_relative_error;
use vickd_tensor::{Graph, Tensor};

const LEN: usize = 2000;
const RATE: u32 = 4000;

fn batch(rng: &mut ChaCha8Rng, b: usize, len: usize) -> Vec<f32> {
    (0..b * len).map(|_| rng.random_range(-0.5..0.5)).collect()
}

#[test]
fn teacher_representation_and_logit_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t: Teacher = Teacher::new(TeacherConfig::for_input(RATE, LEN, 12), &mut rng).unwrap();
    let mut g = Graph::new();
    let x = g.constant(&[2, LEN], batch(&mut rng, 2, LEN)).unwrap();
    let out = t.forward(&mut g, x).unwrap();
    assert_eq!(g.shape(out.representation), &[2, 64]);
    assert_eq!(g.shape(out.logits), &[2, 12]);
}

#[test]
fn uniform_layer_weights_average_the_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t: Teacher<f64> = Teacher::new(TeacherConfig::for_input(RATE, LEN, 5), &mut rng).unwrap();
    let w = t.layer_weights();
    assert!(w.iter().all(|&v| (v - 1.0 / w.len() as f64).abs() < 1e-15));
    let mut g = Graph::new();
    let x: Vec<f64> = (0..3 * LEN).map(|_| rng.random_range(-0.5..0.5)).collect();
    let xi = g.constant(&[3, LEN], x).unwrap();
    let layers = t.layer_outputs(&mut g, xi).unwrap();
    let z = t.aggregate(&mut g, &layers).unwrap();
    let z = g.value(z).to_vec();
    // Plain mean over layers and frames, computed directly.
    let shape = g.shape(layers[0]).to_vec();
    let (b, d, frames) = (shape[0], shape[1], shape[2]);
    for i in 0..b {
        for c in 0..d {
            let mut acc = 0.0;
            for &l in &layers {
                let v = g.value(l);
                acc += (0..frames).map(|f| v[(i * d + c) * frames + f]).sum::<f64>();
            }
            let want = acc / (layers.len() * frames) as f64;
            assert!((z[i * d + c] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn aggregation_weights_receive_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let len = 200;
    let t: Teacher<f64> = Teacher::new(TeacherConfig::for_input(RATE, len, 3), &mut rng).unwrap();
    let x: Vec<f64> = (0..2 * len).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut g = Graph::new();
    let xi = g.constant(&[2, len], x.clone()).unwrap();
    let layers = t.layer_outputs(&mut g, xi).unwrap();
    let frozen: Vec<Tensor<f64>> = layers.iter().map(|&l| g.to_tensor(l)).collect();
    let logits = Tensor::new(&[frozen.len()], (0..frozen.len()).map(|k| 0.3 * k as f64 - 0.5).collect()).unwrap();
    let mut inputs = vec![logits];
    inputs.extend(frozen);
    // Softmax-weighted layer sum, then mean over time, contracted to a scalar.
    let err = max_relative_error(&inputs, |g, v| {
        let w = g.softmax(v[0])?;
        let mut acc = None;
        for (k, &h) in v[1..].iter().enumerate() {
            let wk = g.slice(w, 0, k, 1)?;
            let term = g.mul(h, wk)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        let z = g.mean(acc.unwrap(), 2)?;
        let sq = g.square(z)?;
        g.sum_all(sq)
    })
    .unwrap();
    assert!(err < 1e-4, "{err:e}");
    let mut g = Graph::new();
    let xi = g.constant(&[2, len], x).unwrap();
    let out = t.forward(&mut g, xi).unwrap();
    let sq = g.square(out.representation).unwrap();
    let loss = g.sum_all(sq).unwrap();
    let grads = g.backward(loss).unwrap();
    let p = g.bind(t.params());
    let idx = t.params().index_of("aggregate.logits").unwrap();
    let gw = grads.get(p[idx]).expect("aggregation logits are trainable");
    assert!(gw.iter().any(|&v| v.abs() > 1e-9));
}

#[test]
fn student_shapes_and_inference_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = StudentConfig::preset(StudentPreset::TcresnetMini, RATE, LEN, 12).with_projection(TEACHER_DIM);
    let s: Student = Student::new(cfg, &mut rng).unwrap();
    let mut g = Graph::new();
    let x = g.constant(&[4, LEN], batch(&mut rng, 4, LEN)).unwrap();
    let train = s.forward(&mut g, x, Mode::Train).unwrap();
    assert_eq!(g.shape(train.logits), &[4, 12]);
    assert_eq!(g.shape(train.hidden), &[4, 48]);
    assert_eq!(g.shape(train.projection.unwrap()), &[4, TEACHER_DIM]);
    let inference = s.forward(&mut g, x, Mode::Inference).unwrap();
    assert!(inference.projection.is_none());
}

#[test]
fn default_students_stay_under_the_parameter_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for preset in [StudentPreset::TcresnetMini, StudentPreset::XvectorMini] {
        for (rate, len, classes) in [(4000, 2000, 12), (16000, 16000, 35)] {
            let s: Student = Student::new(StudentConfig::preset(preset, rate, len, classes), &mut rng).unwrap();
            let n = s.inference_param_count();
            assert!(n < 96_000, "{} at {rate} Hz: {n}", preset.name());
        }
    }
}

#[test]
fn teacher_has_at_least_three_times_student_capacity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t: Teacher = Teacher::new(TeacherConfig::for_input(RATE, LEN, 12), &mut rng).unwrap();
    let s: Student = Student::new(StudentConfig::preset(StudentPreset::TcresnetMini, RATE, LEN, 12), &mut rng).unwrap();
    assert!(t.params().num_params() >= 3 * s.inference_param_count());
}

#[test]
fn forward_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = StudentConfig::preset(StudentPreset::XvectorMini, RATE, LEN, 6).with_projection(TEACHER_DIM);
    let s: Student = Student::new(cfg, &mut rng).unwrap();
    let x = batch(&mut rng, 3, LEN);
    let run = || {
        let mut g = Graph::new();
        let xi = g.constant(&[3, LEN], x.clone()).unwrap();
        let o = s.forward(&mut g, xi, Mode::Train).unwrap();
        (g.value(o.logits).to_vec(), g.value(o.projection.unwrap()).to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn wrong_input_length_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s: Student = Student::new(StudentConfig::preset(StudentPreset::TcresnetMini, RATE, LEN, 4), &mut rng).unwrap();
    let mut g = Graph::new();
    let x = g.constant(&[1, LEN - 1], vec![0.0; LEN - 1]).unwrap();
    assert!(s.forward(&mut g, x, Mode::Inference).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact_and_complete() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = StudentConfig::preset(StudentPreset::TcresnetMini, RATE, LEN, 12).with_projection(TEACHER_DIM);
    let s: Student = Student::new(cfg.clone(), &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    save_checkpoint(s.params(), &path).unwrap();
    let loaded = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(loaded.names(), s.params().names());
    for (a, b) in loaded.tensors().iter().zip(s.params().tensors()) {
        assert_eq!(a.shape(), b.shape());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(loaded.num_params(), s.params().num_params());
    // Every conv layer and head contributes named tensors.
    for layer in ["stem", "block1.conv1", "block2.conv2", "block3.shortcut", "classifier", "projection.out"] {
        assert!(loaded.names().iter().any(|n| n.starts_with(layer)), "{layer} missing");
    }
    let rebuilt = Student::from_params(cfg, loaded).unwrap();
    assert_eq!(encode_checkpoint(rebuilt.params()), std::fs::read(&path).unwrap());
}

#[test]
fn foreign_magic_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let s: Student = Student::new(StudentConfig::preset(StudentPreset::TcresnetMini, RATE, LEN, 3), &mut rng).unwrap();
    let mut bytes = encode_checkpoint(s.params());
    bytes[..8].copy_from_slice(b"XXXX0000");
    assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(vickd::Error::Format(_))));
}

#[test]
fn mismatched_architecture_is_rejected_on_load() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = StudentConfig::preset(StudentPreset::TcresnetMini, RATE, LEN, 3);
    let b = StudentConfig::preset(StudentPreset::XvectorMini, RATE, LEN, 3);
    let s: Student = Student::new(a, &mut rng).unwrap();
    assert!(Student::from_params(b, s.params().clone()).is_err());
}
