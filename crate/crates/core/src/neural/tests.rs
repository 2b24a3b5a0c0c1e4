use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::beamforming::{BeamformerSet, Rtf, NULLS_FOUR, NULLS_TWO};
use crate::evaluation::si_sdr;
use crate::spectral::StftPlan;
use crate::{StftConfig, Waveform, WeightField, C64};

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normal(rng, n)).unwrap()
}

/// Largest relative error between the reverse-mode gradient of
/// `<c, build(inputs)>` and central differences over every input entry.
fn fd_check(inputs: &[Tensor], h: f64, build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |ins: &[Tensor]| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars);
        let n = g.value(out).numel();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let c = Arc::new(normal(&mut rng, n));
        let s = g.dot_const(out, c);
        (g, vars, s)
    };
    let (g, vars, s) = eval(inputs);
    let grads = g.backward(s);
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let exact = grads.get(*v).map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data[i];
            probe[k].data[i] = orig + h;
            let (gp, _, sp) = eval(&probe);
            probe[k].data[i] = orig - h;
            let (gm, _, sm) = eval(&probe);
            probe[k].data[i] = orig;
            let numeric = (gp.value(sp).data[0] - gm.value(sm).data[0]) / (2.0 * h);
            let denom = exact[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((exact[i] - numeric).abs() / denom);
        }
    }
    worst
}

#[test]
fn icglu_block_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [
        tensor(&mut rng, &[4, 8, 6]),
        tensor(&mut rng, &[8, 4, 3]),
        tensor(&mut rng, &[8]),
        tensor(&mut rng, &[4]),
        tensor(&mut rng, &[4]),
    ];
    let err = fd_check(&inputs, 1e-5, |g, v| {
        let c = g.conv_freq(v[0], v[1], v[2]);
        let u = g.glu(c);
        let n = g.group_norm(u, v[3], v[4], 2);
        g.elu(n)
    });
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn icglu_shape_is_preserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let x = g.leaf(tensor(&mut rng, &[3, 11, 7]));
    let w = g.leaf(tensor(&mut rng, &[10, 3, 5]));
    let b = g.leaf(tensor(&mut rng, &[10]));
    let c = g.conv_freq(x, w, b);
    let u = g.glu(c);
    assert_eq!(g.value(u).shape, vec![5, 11, 7]);
}

#[test]
fn zero_gate_halves_the_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = tensor(&mut rng, &[4, 3, 2]);
    let half = t.numel() / 2;
    t.data[half..].fill(0.0);
    let mut g = Graph::new();
    let x = g.leaf(t.clone());
    let y = g.glu(x);
    for (o, v) in g.value(y).data.iter().zip(&t.data[..half]) {
        assert_eq!(*o, 0.5 * v);
    }
}

#[test]
fn linear_gradient_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = [
        tensor(&mut rng, &[5, 3, 6]),
        tensor(&mut rng, &[4, 6]),
        tensor(&mut rng, &[4]),
    ];
    let err = fd_check(&inputs, 1e-3, |g, v| g.linear(v[0], v[1], v[2]));
    assert!(err < 1e-8, "relative error {err}");
}

#[test]
fn reshapes_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = tensor(&mut rng, &[3, 4, 5]);
    let mut g = Graph::new();
    let x = g.leaf(t.clone());
    let s = g.to_sequences(x);
    assert_eq!(g.value(s).shape, vec![4, 5, 3]);
    let back = g.from_sequences(s);
    assert_eq!(g.value(back), &t);
}

#[test]
fn bilstm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (d, h) = (3, 2);
    let mut inputs = vec![tensor(&mut rng, &[2, 5, d])];
    for _ in 0..2 {
        inputs.push(tensor(&mut rng, &[4 * h, d]));
        inputs.push(tensor(&mut rng, &[4 * h, h]));
        inputs.push(tensor(&mut rng, &[4 * h]));
    }
    let err = fd_check(&inputs, 1e-5, |g, v| g.bilstm(v[0], [v[1], v[2], v[3], v[4], v[5], v[6]]));
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn attention_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs: Vec<Tensor> = (0..4).map(|_| tensor(&mut rng, &[3, 4, 2])).collect();
    let err = fd_check(&inputs, 1e-5, |g, v| g.attention(v[0], &v[1..]));
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn identical_keys_give_uniform_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let k = tensor(&mut rng, &[4, 3, 3]);
    let mut g = Graph::new();
    let q = g.leaf(tensor(&mut rng, &[4, 3, 3]));
    let ks: Vec<Var> = (0..3).map(|_| g.leaf(k.clone())).collect();
    let a = g.attention(q, &ks);
    for v in &g.value(a).data {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn scalar_softmax_example_and_shift_invariance() {
    let run = |k1: f64, k2: f64| {
        let mut g = Graph::new();
        let q = g.leaf(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let a = g.leaf(Tensor::new(vec![1, 1, 1], vec![k1]).unwrap());
        let b = g.leaf(Tensor::new(vec![1, 1, 1], vec![k2]).unwrap());
        let alpha = g.attention(q, &[a, b]);
        g.value(alpha).data.clone()
    };
    let base = run(10.0, 0.0);
    assert!((base[0] - 1.0 / (1.0 + (-10f64).exp())).abs() < 1e-15);
    assert!((base[0] - 0.99995).abs() < 1e-5);
    let shifted = run(13.5, 3.5);
    for (x, y) in base.iter().zip(&shifted) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn attention_weights_lie_on_the_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let q = g.leaf(tensor(&mut rng, &[4, 50, 40]));
    let ks: Vec<Var> = (0..4)
        .map(|_| {
            let mut t = tensor(&mut rng, &[4, 50, 40]);
            t.data.iter_mut().for_each(|v| *v *= 20.0);
            g.leaf(t)
        })
        .collect();
    let a = g.attention(q, &ks);
    for bin in g.value(a).data.chunks(4) {
        assert!(bin.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((bin.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn boundary_inputs_have_finite_gradients() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![1, 1, 2], vec![0.0, 0.0]).unwrap());
    let e = g.elu(x);
    let q = g.leaf(Tensor::new(vec![1, 1, 1], vec![0.0]).unwrap());
    let k = g.leaf(Tensor::new(vec![1, 1, 1], vec![0.0]).unwrap());
    let a = g.attention(q, &[k, k]);
    let se = g.dot_const(e, Arc::new(vec![1.0, 1.0]));
    let sa = g.dot_const(a, Arc::new(vec![1.0, -1.0]));
    let total = g.weighted_sum(&[(se, 1.0), (sa, 1.0)]);
    let grads = g.backward(total);
    assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0]);
    assert!(grads.get(q).unwrap()[0].is_finite());
    assert!(grads.get(k).unwrap()[0].is_finite());
}

#[test]
fn combine_istft_gradient_and_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = StftConfig::new(16, 4, 16_000).unwrap();
    let plan = Arc::new(StftPlan::new(cfg).unwrap());
    let len = 40;
    let (f, t, j) = (cfg.num_bins(), cfg.num_frames(len), 3);
    let wav = Waveform::new(16_000, (0..j).map(|_| normal(&mut rng, len)).collect()).unwrap();
    let spec = plan.stft(&wav).unwrap();
    let ft = f * t;
    let mut yd = vec![0.0; j * 2 * ft];
    for fi in 0..f {
        for ti in 0..t {
            for (k, v) in spec.bin(fi, ti).iter().enumerate() {
                yd[k * 2 * ft + fi * t + ti] = v.re;
                yd[k * 2 * ft + ft + fi * t + ti] = v.im;
            }
        }
    }
    let y = Tensor::new(vec![j, 2, f, t], yd).unwrap();
    let alpha = Tensor::new(vec![f, t, j], (0..f * t * j).map(|_| rng.random::<f64>()).collect()).unwrap();

    let mut g = Graph::new();
    let av = g.leaf(alpha.clone());
    let yv = g.leaf(y.clone());
    let out = g.combine_istft(av, yv, plan.clone(), len);
    let mut mixed = crate::MultichannelSpectrogram::zeros(1, f, t);
    for fi in 0..f {
        for ti in 0..t {
            let o = (fi * t + ti) * j;
            let s: C64 = (0..j).map(|k| spec.get(k, fi, ti) * alpha.data[o + k]).sum();
            mixed.set(0, fi, ti, s);
        }
    }
    let expect = plan.istft(&mixed, len).unwrap();
    for (a, b) in g.value(out).data.iter().zip(expect.channel(0)) {
        assert!((a - b).abs() < 1e-12);
    }

    let err = fd_check(&[alpha, y], 1e-5, |g, v| g.combine_istft(v[0], v[1], plan.clone(), len));
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn refine_gradient_and_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let cfg = StftConfig::new(16, 4, 16_000).unwrap();
    let plan = StftPlan::new(cfg).unwrap();
    let wav = Waveform::new(16_000, vec![normal(&mut rng, 40), normal(&mut rng, 40)]).unwrap();
    let x = Arc::new(plan.stft(&wav).unwrap());
    let a = Arc::new(Rtf::steering(70.0, 0.1, 2, &cfg));
    let (f, t, j) = (x.num_bins(), x.num_frames(), 3);
    let alpha = Tensor::new(vec![f, t, j], (0..f * t * j).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();

    let mut g = Graph::new();
    let av = g.leaf(alpha.clone());
    let (_, beams) = g.refine(av, x.clone(), a.clone()).unwrap();
    for b in &beams {
        assert!(b.distortion_error(&a) < 1e-8);
    }

    let err = fd_check(&[alpha], 1e-6, |g, v| g.refine(v[0], x.clone(), a.clone()).unwrap().0);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn si_sdr_and_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let reference = Arc::new(normal(&mut rng, 30));
    let est = tensor(&mut rng, &[30]);
    let err = fd_check(&[est], 1e-6, |g, v| g.si_sdr_loss(v[0], reference.clone()));
    assert!(err < 1e-4, "relative error {err}");

    let alpha = Tensor::new(vec![3, 2, 2], (0..12).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
    let err = fd_check(&[alpha], 1e-6, |g, v| g.entropy(v[0], 1e-8));
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn si_sdr_loss_examples() {
    assert!(si_sdr_loss(&[1.0, 1.0], &[1.0, 0.0]).unwrap().abs() < 1e-12);
    assert_eq!(si_sdr_loss(&[0.3, -1.0, 2.0], &[0.3, -1.0, 2.0]).unwrap(), -SI_SDR_CLAMP_DB);

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let r = normal(&mut rng, 200);
    let e: Vec<f64> = r.iter().map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let scaled: Vec<f64> = e.iter().map(|v| 2.0 * v).collect();
    let l = si_sdr_loss(&e, &r).unwrap();
    assert!((l - si_sdr_loss(&scaled, &r).unwrap()).abs() < 1e-12);
    assert!((l + si_sdr(&e, &r).unwrap()).abs() < 1e-9);
    assert!(si_sdr_loss(&e[..10], &r).is_err());
}

#[test]
fn entropy_loss_examples() {
    for j in [2usize, 3, 4] {
        let u = WeightField::uniform(j, 5, 7);
        let expect = (j as f64).ln() / j as f64;
        assert!((entropy_loss(&u, 1e-8) - expect).abs() < 1e-12);
    }

    let mut data = vec![0.0; 2 * 5 * 7];
    for (i, v) in data.iter_mut().enumerate() {
        *v = if i % 2 == 0 { 1.0 } else { 0.0 };
    }
    let hot = WeightField::from_data(2, 5, 7, data).unwrap();
    assert_eq!(entropy_loss(&hot, 1e-8), 0.0);
    // weights below the floor are scored with ln(eps)
    let big = 1.0 - 1e-12;
    let tiny = WeightField::from_data(2, 1, 1, vec![1e-12, big]).unwrap();
    let expect = 0.5 * (1e-12 * 8.0 * 10f64.ln() - big * (big - 1.0).ln_1p());
    assert!((entropy_loss(&tiny, 1e-8) - expect).abs() < 1e-24);
}

#[test]
fn eipd_examples() {
    let cfg = StftConfig::new(16, 4, 16_000).unwrap();
    let f = cfg.num_bins();
    let ones = Rtf::from_vectors(2, 0, vec![vec![C64::new(1.0, 0.0); 2]; f]).unwrap();
    let e = eipd_features(&ones, 3).unwrap();
    assert_eq!(e.shape, vec![2, f, 3]);
    assert!(e.data[..3 * f].iter().all(|&v| v == 1.0));
    assert!(e.data[3 * f..].iter().all(|&v| v == 0.0));

    let quarter = Rtf::from_vectors(2, 0, vec![vec![C64::new(1.0, 0.0), C64::new(0.0, -1.0)]; f]).unwrap();
    let e = eipd_features(&quarter, 2).unwrap();
    assert!(e.data[..2 * f].iter().all(|&v| v.abs() < 1e-15));
    assert!(e.data[2 * f..].iter().all(|&v| (v + 1.0).abs() < 1e-15));

    let broadside = Rtf::steering(90.0, 0.1, 2, &cfg);
    let e = eipd_features(&broadside, 1).unwrap();
    assert!(e.data[f..].iter().all(|&v| v.abs() < 1e-12));

    let three = Rtf::from_vectors(3, 0, vec![vec![C64::new(1.0, 0.0); 3]; f]).unwrap();
    assert!(eipd_features(&three, 1).is_err());
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        channels: 4,
        hidden: 3,
        kernel: 3,
        blocks: 2,
        groups: 2,
        lstm_layers: 2,
    }
}

/// Broadside target plus an interferer delayed by `delay` samples on the second microphone.
fn toy_signals(rng: &mut ChaCha8Rng, len: usize, delay: usize) -> (Waveform, Vec<f64>) {
    let s = normal(rng, len);
    let i: Vec<f64> = normal(rng, len + delay).iter().map(|v| 2.0 * v).collect();
    let m0: Vec<f64> = (0..len).map(|n| s[n] + i[n + delay]).collect();
    let m1: Vec<f64> = (0..len).map(|n| s[n] + i[n]).collect();
    (Waveform::new(16_000, vec![m0, m1]).unwrap(), s)
}

fn toy_item(rng: &mut ChaCha8Rng, cfg: &StftConfig, len: usize, doas: &[f64]) -> TrainItem {
    let plan = StftPlan::new(*cfg).unwrap();
    let (wav, s) = toy_signals(rng, len, 2);
    let a = Rtf::steering(90.0, 0.1, 2, cfg);
    TrainItem {
        x: plan.stft(&wav).unwrap(),
        init: BeamformerSet::nulls(&a, doas, 0.1, cfg).unwrap(),
        a,
        reference: Arc::new(s),
    }
}

#[test]
fn full_model_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = StftConfig::new(16, 4, 16_000).unwrap();
    let item = toy_item(&mut rng, &cfg, 20, &NULLS_TWO);
    assert_eq!((item.x.num_bins(), item.x.num_frames()), (9, 6));
    let mut net = CombinationNet::new(toy_config(), 5).unwrap();
    // sharpen the attention so the weights sit away from the uniform point
    for name in ["mix.proj.w", "beam.proj.w"] {
        let k = net.params.position(name).unwrap();
        net.params.tensors_mut()[k].data.iter_mut().for_each(|v| *v *= 30.0);
    }
    let plan = Arc::new(StftPlan::new(cfg).unwrap());
    let spread = net.infer(&item.x, &item.a, &item.init).unwrap().first_weights;
    assert!(spread.data().iter().any(|&v| !(0.3..0.7).contains(&v)));
    let modes = [
        (EntropyTarget::Both, RefineGradient::Through),
        (EntropyTarget::Final, RefineGradient::Through),
        (EntropyTarget::Both, RefineGradient::Stop),
    ];
    for (entropy, refine) in modes {
        let opts = LossOptions {
            entropy,
            refine,
            ..LossOptions::default()
        };
        let err = grad_check(&net, &item, &plan, &opts, 400, 1e-5, &mut rng).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn zero_lambda_loss_is_the_si_sdr_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cfg = StftConfig::new(16, 4, 16_000).unwrap();
    let item = toy_item(&mut rng, &cfg, 60, &NULLS_TWO);
    let net = CombinationNet::new(toy_config(), 6).unwrap();
    let plan = Arc::new(StftPlan::new(cfg).unwrap());
    let opts = LossOptions {
        lambda: 0.0,
        ..LossOptions::default()
    };
    let r = net.loss_and_grads(&item, &plan, &opts).unwrap();
    assert!((r.loss + r.si_sdr).abs() < 1e-12);

    let opts = LossOptions {
        entropy: EntropyTarget::Final,
        ..LossOptions::default()
    };
    let r2 = net.loss_and_grads(&item, &plan, &opts).unwrap();
    assert!((r2.loss - (-r.si_sdr + 0.05 * r2.entropy_final)).abs() < 1e-12);
}

#[test]
fn inference_with_more_beams_than_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let cfg = StftConfig::new(64, 16, 16_000).unwrap();
    let net = CombinationNet::new(toy_config(), 7).unwrap();
    for doas in [&NULLS_TWO[..], &NULLS_FOUR[..], &[60.0][..]] {
        let item = toy_item(&mut rng, &cfg, 800, doas);
        let out = net.infer(&item.x, &item.a, &item.init).unwrap();
        assert_eq!(out.weights.num_beams(), doas.len());
        assert!(out.weights.simplex_violation() < 1e-12);
        assert!(out.first_weights.simplex_violation() < 1e-12);
        assert!(out.beams.max_distortion_error(&item.a) < 1e-8);
        for (b, d) in out.beams.beams.iter().zip(doas) {
            assert_eq!(b.null_doa, Some(*d));
        }
    }
}

#[test]
fn beam_order_permutes_the_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let cfg = StftConfig::new(64, 16, 16_000).unwrap();
    let item = toy_item(&mut rng, &cfg, 800, &NULLS_FOUR);
    let net = CombinationNet::new(toy_config(), 8).unwrap();
    let order = [2usize, 0, 3, 1];
    let permuted = BeamformerSet::new(order.iter().map(|&j| item.init.beams[j].clone()).collect());
    let a = net.infer(&item.x, &item.a, &item.init).unwrap();
    let b = net.infer(&item.x, &item.a, &permuted).unwrap();
    for f in 0..a.weights.num_bins() {
        for t in 0..a.weights.num_frames() {
            for (k, &j) in order.iter().enumerate() {
                assert!((a.weights.get(j, f, t) - b.weights.get(k, f, t)).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn untrained_output_is_sane() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = StftConfig::new(64, 16, 16_000).unwrap();
    let plan = StftPlan::new(cfg).unwrap();
    let item = toy_item(&mut rng, &cfg, 1600, &NULLS_TWO);
    let net = CombinationNet::new(toy_config(), 9).unwrap();
    let out = net.infer(&item.x, &item.a, &item.init).unwrap();
    let est = plan.istft(&out.estimate, 1600).unwrap();
    let score = si_sdr(est.channel(0), &item.reference).unwrap();
    assert!(score.is_finite());
    let worst = (0..out.outputs.num_beams())
        .map(|j| {
            let y = plan.istft(&out.outputs.beam(j), 1600).unwrap();
            si_sdr(y.channel(0), &item.reference).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(score >= worst - 10.0, "{score} vs {worst}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let net = CombinationNet::new(toy_config(), 10).unwrap();
    let meta = serde_json::json!({"epoch": 3});
    save_checkpoint(&path, &net, &meta).unwrap();
    let (loaded, m) = load_checkpoint(&path).unwrap();
    assert_eq!(m["epoch"], 3);
    assert_eq!(loaded.config, net.config);
    assert_eq!(loaded.params.names(), net.params.names());
    for (a, b) in loaded.params.tensors().iter().zip(net.params.tensors()) {
        assert_eq!(a.shape, b.shape);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &loaded, &meta).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn mismatched_parameters_are_rejected() {
    let net = CombinationNet::new(toy_config(), 11).unwrap();
    let other = ModelConfig {
        channels: 8,
        ..toy_config()
    };
    assert!(CombinationNet::from_params(other, net.params.clone()).is_err());
}

#[test]
fn initialization_follows_the_layout() {
    let cfg = toy_config();
    let net = CombinationNet::new(cfg.clone(), 12).unwrap();
    let h = cfg.hidden;
    let b = net.params.get("beam.lstm1.fw.b").unwrap();
    assert!(b.data[..h].iter().all(|&v| v == 0.0));
    assert!(b.data[h..2 * h].iter().all(|&v| v == 1.0));
    assert!(b.data[2 * h..].iter().all(|&v| v == 0.0));
    let whh = net.params.get("mix.lstm0.bw.whh").unwrap();
    for gate in 0..4 {
        let blk = &whh.data[gate * h * h..(gate + 1) * h * h];
        for i in 0..h {
            for j in 0..h {
                let dot: f64 = (0..h).map(|k| blk[i * h + k] * blk[j * h + k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }
    assert!(net.params.get("mix.block0.conv.b").unwrap().data.iter().all(|&v| v == 0.0));
    assert_eq!(net, CombinationNet::new(cfg, 12).unwrap());
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 6e-4);
    assert_eq!(cfg.lr_at(9), 6e-4);
    assert!((cfg.lr_at(24) - 6e-4 * 0.8 * 0.8).abs() < 1e-18);
}

fn toy_samples(seed: u64, n: usize, cfg: &StftConfig) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = StftPlan::new(*cfg).unwrap();
    (0..n)
        .map(|k| {
            let (wav, s) = toy_signals(&mut rng, 400, 1 + k % 3);
            Sample {
                id: format!("toy{k}"),
                x: plan.stft(&wav).unwrap(),
                a: Rtf::steering(90.0, 0.1, 2, cfg),
                reference: Arc::new(s),
                spacing: 0.1,
            }
        })
        .collect()
}

fn toy_train_config(cfg: StftConfig) -> TrainConfig {
    TrainConfig {
        model: toy_config(),
        stft: cfg,
        epochs: 2,
        batch_size: 2,
        lr: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = StftConfig::new(32, 8, 16_000).unwrap();
    let samples = toy_samples(18, 4, &cfg);
    let tc = toy_train_config(cfg);
    let a = train_samples(&tc, &samples, &samples[..2], None).unwrap();
    let b = train_samples(&tc, &samples, &samples[..2], None).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(a.log, b.log);
    assert_ne!(a.net, CombinationNet::new(toy_config(), 3).unwrap());
    assert_eq!(a.log.len(), 2);
    assert!(a.log.iter().all(|e| e.val_si_sdr.is_some()));

    let dir = tempfile::tempdir().unwrap();
    train_samples(&tc, &samples, &[], Some(dir.path())).unwrap();
    let first = std::fs::read(dir.path().join("last.ckpt")).unwrap();
    train_samples(&tc, &samples, &[], Some(dir.path())).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("last.ckpt")).unwrap());
    assert!(dir.path().join("best.ckpt").exists());
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn divergence_dumps_state() {
    let cfg = StftConfig::new(32, 8, 16_000).unwrap();
    let samples = toy_samples(19, 2, &cfg);
    let tc = TrainConfig {
        lr: f64::NAN,
        ..toy_train_config(cfg)
    };
    let dir = tempfile::tempdir().unwrap();
    match train_samples(&tc, &samples, &[], Some(dir.path())) {
        Err(crate::Error::Diverged { epoch, dump }) => {
            assert_eq!(epoch, 1);
            assert!(dump.exists());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}
