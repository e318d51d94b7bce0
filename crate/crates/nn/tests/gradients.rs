use poster_nn::gradcheck::check;
use poster_nn::{BiLstm, Checkpoint, Conv2d, ConvTranspose2d, Linear, ParamStore, Tape, Tensor};
use poster_nn::{Adam, AdamConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn randomize_biases(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.get(id).name.ends_with("bias") {
            store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
}

#[test]
fn conv_stack_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let c1 = Conv2d::new(&mut store, "c1", 2, 4, 3, 2, 1, &mut rng);
    let c2 = Conv2d::new(&mut store, "c2", 4, 3, 3, 1, 1, &mut rng);
    randomize_biases(&mut store, &mut rng);
    let x = random_tensor(&mut rng, &[2, 7, 6]);
    let target = random_tensor(&mut rng, &[3, 4, 3]);
    let report = check(&mut store, STEP, |tape| {
        let xv = tape.input(x.clone());
        let h = c1.forward(tape, xv)?;
        let h = tape.tanh(h);
        let y = c2.forward(tape, h)?;
        tape.mse(y, target.clone())
    })
    .unwrap();
    assert!(store.num_scalars() <= 5000);
    assert!(report.max_relative_error < TOL, "{report:?}");
}

#[test]
fn transposed_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let d1 = ConvTranspose2d::new(&mut store, "d1", 3, 4, 3, 2, 1, &mut rng);
    let d2 = ConvTranspose2d::new(&mut store, "d2", 4, 1, 5, 2, 2, &mut rng);
    randomize_biases(&mut store, &mut rng);
    let x = random_tensor(&mut rng, &[3, 3, 2]);
    let target = random_tensor(&mut rng, &[1, 11, 8]);
    let report = check(&mut store, STEP, |tape| {
        let xv = tape.input(x.clone());
        let h = d1.forward_to(tape, xv, (6, 4))?;
        let h = tape.tanh(h);
        let y = d2.forward_to(tape, h, (11, 8))?;
        let y = tape.sigmoid(y);
        tape.mse(y, target.clone())
    })
    .unwrap();
    assert!(report.max_relative_error < TOL, "{report:?}");
}

#[test]
fn bilstm_and_linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let net = BiLstm::new(&mut store, "seq", 3, 4, 2, &mut rng);
    let head = Linear::new(&mut store, "head", 8, 2, &mut rng);
    randomize_biases(&mut store, &mut rng);
    let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut rng, &[3])).collect();
    let target = random_tensor(&mut rng, &[6]);
    let report = check(&mut store, STEP, |tape| {
        let seq: Vec<_> = xs.iter().map(|t| tape.input(t.clone())).collect();
        let out = net.forward(tape, &seq)?;
        let heads = out
            .iter()
            .map(|h| {
                let y = head.forward(tape, *h)?;
                Ok(tape.sigmoid(y))
            })
            .collect::<poster_nn::Result<Vec<_>>>()?;
        let y = tape.concat(&heads)?;
        tape.mse(y, target.clone())
    })
    .unwrap();
    assert!(store.num_scalars() <= 5000);
    assert!(report.max_relative_error < TOL, "{report:?}");
}

#[test]
fn encoder_decoder_with_broadcast_and_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let enc = Conv2d::new(&mut store, "enc", 1, 3, 3, 2, 1, &mut rng);
    let fc = Linear::new(&mut store, "fc", 3 * 4 * 3, 5, &mut rng);
    let embed = store.add_uniform("embed", &[2, 4, 3], 0.5, &mut rng);
    let dec = ConvTranspose2d::new(&mut store, "dec", 7, 1, 3, 2, 1, &mut rng);
    randomize_biases(&mut store, &mut rng);
    let x = random_tensor(&mut rng, &[1, 8, 6]);
    let target = Tensor::new(vec![1, 8, 6], (0..48).map(|i| (i % 2) as f64).collect()).unwrap();
    let report = check(&mut store, STEP, |tape| {
        let xv = tape.input(x.clone());
        let h = enc.forward(tape, xv)?;
        let h = tape.relu(h);
        let z = fc.forward(tape, h)?;
        let z = tape.tanh(z);
        let grid = tape.broadcast_spatial(z, 4, 3)?;
        let e = tape.param(embed);
        let cat = tape.concat(&[grid, e])?;
        let y = dec.forward_to(tape, cat, (8, 6))?;
        let y = tape.sigmoid(y);
        tape.mse(y, target.clone())
    })
    .unwrap();
    assert!(report.max_relative_error < TOL, "{report:?}");
}

#[test]
fn leaky_relu_passes_slope_below_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let fc = Linear::new(&mut store, "fc", 6, 8, &mut rng);
    randomize_biases(&mut store, &mut rng);
    let x = random_tensor(&mut rng, &[6]);
    let target = Tensor::vector((0..8).map(|i| i as f64 / 8.0).collect());
    let report = check(&mut store, STEP, |tape| {
        let xv = tape.input(x.clone());
        let z = fc.forward(tape, xv)?;
        let z = tape.leaky_relu(z, 0.1);
        tape.mse(z, target.clone())
    })
    .unwrap();
    assert!(report.max_relative_error < TOL, "{report:?}");

    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let v = tape.input(Tensor::vector(vec![-2.0, 0.5]));
    let y = tape.leaky_relu(v, 0.01);
    assert_eq!(tape.value(y).data(), &[-0.02, 0.5]);
}

#[test]
fn loss_independent_of_parameter_has_zero_gradient() {
    let mut store = ParamStore::new();
    let used = store.add("used", Tensor::vector(vec![1.0, 2.0]));
    let unused = store.add("unused", Tensor::vector(vec![3.0]));
    let mut tape = Tape::new(&store);
    let u = tape.param(used);
    let _ = tape.param(unused);
    let sq = tape.mul(u, u).unwrap();
    let loss = tape.sum(sq);
    let grads = tape.backward(loss).unwrap();
    store.accumulate(&grads);
    assert_eq!(store.get(used).grad.data(), &[2.0, 4.0]);
    assert_eq!(store.get(unused).grad.data(), &[0.0]);
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let _ = Conv2d::new(&mut store, "c", 2, 3, 3, 1, 1, &mut rng);
    let _ = BiLstm::new(&mut store, "seq", 4, 3, 1, &mut rng);
    let mut adam = Adam::new(AdamConfig::default(), &store);
    for p in store.iter_mut() {
        p.grad.data_mut().iter_mut().for_each(|g| *g = rng.random_range(-1.0..1.0));
    }
    adam.step(&mut store);
    let ckpt = Checkpoint::from_store("{\"kind\":\"test\"}", &store, Some(&adam));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    let bits = |c: &Checkpoint| -> Vec<u64> {
        c.tensors.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&back), bits(&ckpt));

    let mut fresh = ParamStore::new();
    let mut rng2 = ChaCha8Rng::seed_from_u64(77);
    let _ = Conv2d::new(&mut fresh, "c", 2, 3, 3, 1, 1, &mut rng2);
    let _ = BiLstm::new(&mut fresh, "seq", 4, 3, 1, &mut rng2);
    back.load_into(&mut fresh).unwrap();
    for ((_, a), (_, b)) in fresh.iter().zip(store.iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn checkpoint_rejects_garbage() {
    let err = Checkpoint::read_from(&b"NOTACKPTxxxx"[..]).unwrap_err();
    assert!(err.to_string().contains("magic"));
}
