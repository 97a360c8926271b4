use lightlink_autodiff::checkpoint::{from_bytes, load, save, to_bytes};
use lightlink_autodiff::optim::{Adam, AdamConfig};
use lightlink_autodiff::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use serde_json::json;

fn tensors() -> impl Strategy<Value = Vec<(usize, usize, Vec<f32>)>> {
    prop::collection::vec(
        (1usize..5, 1usize..5).prop_flat_map(|(r, c)| {
            prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), r * c)
                .prop_map(move |d| (r, c, d))
        }),
        1..6,
    )
}

fn store_of(parts: &[(usize, usize, Vec<f32>)]) -> ParamStore<f32> {
    let mut p = ParamStore::new();
    for (i, (r, c, d)) in parts.iter().enumerate() {
        p.insert(format!("layer{i}.weight"), Tensor::matrix(*r, *c, d.clone()).unwrap())
            .unwrap();
    }
    p
}

proptest! {
    #[test]
    fn bytes_round_trip_exactly(parts in tensors(), tag in "[a-z]{0,8}") {
        let p = store_of(&parts);
        let meta = json!({ "tag": tag, "sizes": [1, 2, 3] });
        let bytes = to_bytes(&p, &meta).unwrap();
        let ck = from_bytes(&bytes).unwrap();
        prop_assert_eq!(&ck.metadata, &meta);
        prop_assert_eq!(ck.params.len(), p.len());
        for ((_, n1, t1), (_, n2, t2)) in p.iter().zip(ck.params.iter()) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(t1.shape(), t2.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(t1), bits(t2));
        }
        prop_assert_eq!(to_bytes(&ck.params, &ck.metadata).unwrap(), bytes);
    }

    #[test]
    fn truncated_payloads_are_rejected(parts in tensors(), cut in 1usize..16) {
        let bytes = to_bytes(&store_of(&parts), &json!({})).unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }
}

#[test]
fn save_and_load_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let p = store_of(&[(2, 2, vec![1.0, -0.5, 3.25, 0.0]), (1, 3, vec![7.0, 8.0, 9.0])]);
    save(&path, &p, &json!({"model": "x"})).unwrap();
    let ck = load(&path).unwrap();
    assert_eq!(ck.params.by_name("layer1.weight").unwrap().data(), &[7.0, 8.0, 9.0]);
    assert_eq!(ck.metadata["model"], "x");
    assert!(load(dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn malformed_manifests_are_rejected() {
    let p = store_of(&[(1, 2, vec![1.0, 2.0])]);
    let bytes = to_bytes(&p, &json!({})).unwrap();
    let nul = bytes.iter().position(|&b| b == 0).unwrap();

    assert!(from_bytes(&bytes[..nul]).is_err(), "no terminator");
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0, 0, 0, 0]);
    assert!(from_bytes(&extra).is_err(), "trailing payload");

    let manifest = String::from_utf8(bytes[..nul].to_vec()).unwrap();
    for (from, to) in [("\"f32\"", "\"f16\""), ("\"format_version\":1", "\"format_version\":9")] {
        assert!(manifest.contains(from), "{manifest}");
        let mut edited = manifest.replace(from, to).into_bytes();
        edited.extend_from_slice(&bytes[nul..]);
        assert!(from_bytes(&edited).is_err(), "{to}");
    }
}

#[test]
fn adam_first_step_matches_the_update_rule() {
    let cfg = AdamConfig {
        learning_rate: 0.1,
        beta1: 0.9,
        beta2: 0.99,
        epsilon: 1e-8,
    };
    let mut p = ParamStore::<f64>::new();
    let id = p.insert("w", Tensor::row(vec![2.0, -1.0, 0.0]).unwrap()).unwrap();
    let mut opt = Adam::new(cfg);
    let mut expected = p.get(id).data().to_vec();
    let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
    for step in 1..=3 {
        // loss = sum(w^3); gradient 3 w^2.
        let mut g = Graph::new();
        let w = g.param(&p, id).unwrap();
        let sq = g.mul(w, w).unwrap();
        let cube = g.mul(sq, w).unwrap();
        let loss = g.sum_all(cube).unwrap();
        g.backward(loss).unwrap();
        opt.step(&mut p, &g.param_grads());

        for i in 0..3 {
            let grad = 3.0 * expected[i] * expected[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad * grad;
            let m_hat = m[i] / (1.0 - cfg.beta1.powi(step));
            let v_hat = v[i] / (1.0 - cfg.beta2.powi(step));
            expected[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        for (a, b) in p.get(id).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "step {step}: {a} vs {b}");
        }
    }
    assert_eq!(opt.steps(), 3);
    // A zero gradient leaves the coordinate where it was.
    assert_eq!(expected[2], 0.0);
}
