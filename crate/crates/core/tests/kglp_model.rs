mod common;

use common::{fill_params, gradient_error, toy, toy_dataset, Toy};
use jrrelp_core::corpus::{build_answer_sets, AnswerSets};
use jrrelp_core::embeddings::{EmbeddingBank, EmbeddingDims};
use jrrelp_core::kglp_model::{
    forward_kglp, merge_conve_features, merge_distmult, score_objects, KglpModel, KglpModelConfig, Merge,
};
use jrrelp_core::nn::Mode;
use jrrelp_core::objective::{loss_kglp, Reduction};
use jrrelp_core::tensor::{sigmoid, ConvGeometry, Graph, Matrix, ParamStore};
use jrrelp_core::Error;
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bank(store: &mut ParamStore, toy: &Toy, answers: &AnswerSets, dim: usize) -> EmbeddingBank {
    let dims = EmbeddingDims {
        word: dim,
        relation: dim,
        attribute: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    EmbeddingBank::new(store, &toy.vocab, answers.candidate_domain().len(), dims, &mut rng).unwrap()
}

fn conve(rows: usize, cols: usize, filters: usize, kernel: usize) -> KglpModelConfig {
    KglpModelConfig {
        merge: Merge::Conve,
        conve_filters: filters,
        conve_kernel: kernel,
        reshape_rows: rows,
        reshape_cols: cols,
        dropout_rate: 0.0,
    }
}

fn distmult() -> KglpModelConfig {
    KglpModelConfig {
        merge: Merge::Distmult,
        ..KglpModelConfig::default()
    }
}

fn model(store: &mut ParamStore, bank: &EmbeddingBank, cfg: &KglpModelConfig) -> KglpModel {
    KglpModel::new(store, bank, cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
}

/// Valid cross-correlation of a `h x w` row-major image, plus bias and ReLU.
fn naive_conv(image: &[f64], h: usize, w: usize, kernel: &[f64], k: usize, bias: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..=h - k {
        for j in 0..=w - k {
            let mut acc = bias;
            for u in 0..k {
                for v in 0..k {
                    acc += image[(i + u) * w + j + v] * kernel[u * k + v];
                }
            }
            out.push(acc.max(0.0));
        }
    }
    out
}

#[test]
fn conve_shapes_follow_geometry() {
    let t = toy(None);
    let mut store = ParamStore::new();
    let bank = bank(&mut store, &t, &t.answers, 16);
    let cfg = conve(4, 4, 1, 3);
    let geom = cfg.geometry();
    assert_eq!((geom.height, geom.width), (8, 4));
    assert_eq!((geom.out_height(), geom.out_width(), geom.out_len()), (6, 2, 12));
    let m = model(&mut store, &bank, &cfg);
    let kernel = store.id_of("kglp.conv.kernel").unwrap();
    let proj = store.id_of("kglp.proj.weight").unwrap();
    assert_eq!(store.value(kernel).dim(), (1, 9));
    assert_eq!(store.value(proj).dim(), (16, 12));
    let out = forward_kglp(&store, &m, &bank, &t.answers, &t.batch(&[0, 1])).unwrap();
    assert_eq!(out.z.dim(), (16, 2));
    assert_eq!(out.obj_probs.dim(), (t.answers.candidate_domain().len(), 2));
    assert!(out.obj_probs.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn zero_inputs_leave_only_the_projection_bias() {
    let t = toy(None);
    let mut store = ParamStore::new();
    let bank = bank(&mut store, &t, &t.answers, 16);
    let m = model(&mut store, &bank, &conve(4, 4, 2, 3));
    let bias = store.id_of("kglp.proj.bias").unwrap();

    let z_of = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let s = g.input(Matrix::zeros((16, 2)));
        let r = g.input(Matrix::zeros((16, 2)));
        let z = m.merge(&mut g, s, r, &mut Mode::eval()).unwrap();
        g.value(z).clone()
    };
    assert!(z_of(&store).iter().all(|&v| v == 0.0));

    for (i, v) in store.value_mut(bias).iter_mut().enumerate() {
        *v = i as f64 * 0.25 - 1.0;
    }
    let z = z_of(&store);
    for i in 0..16 {
        let expect = (i as f64 * 0.25 - 1.0).max(0.0);
        assert_eq!(z[[i, 0]], expect);
        assert_eq!(z[[i, 1]], expect);
    }
}

#[test]
fn conve_features_match_hand_cross_correlation() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let s = g.input(array![[1.0], [2.0], [3.0], [4.0]]);
    let r = g.input(array![[5.0], [6.0], [7.0], [8.0]]);
    let kernel = g.input(array![[1.0, -1.0, 2.0, 0.5], [-1.0, 0.0, 0.0, 0.0]]);
    let bias = g.input(array![[0.1], [0.0]]);
    let geom = ConvGeometry {
        height: 4,
        width: 2,
        kernel: 2,
        filters: 2,
    };
    let f = merge_conve_features(&mut g, s, r, kernel, bias, geom);
    let got: Vec<f64> = g.value(f).column(0).to_vec();
    let want = [7.1, 12.1, 17.1, 0.0, 0.0, 0.0];
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{got:?}");
    }
}

#[test]
fn conve_features_match_naive_oracle_three_by_three() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let sv = Matrix::from_shape_fn((9, 2), |(i, j)| ((i * 7 + j * 3) as f64 * 0.61).sin());
    let rv = Matrix::from_shape_fn((9, 2), |(i, j)| ((i * 5 + j * 11) as f64 * 0.37).cos());
    let kv = Matrix::from_shape_fn((2, 9), |(f, i)| ((f * 9 + i) as f64 * 0.83).sin());
    let bv = array![[0.05], [-0.1]];
    let s = g.input(sv.clone());
    let r = g.input(rv.clone());
    let kernel = g.input(kv.clone());
    let bias = g.input(bv.clone());
    let geom = ConvGeometry {
        height: 6,
        width: 3,
        kernel: 3,
        filters: 2,
    };
    let f = merge_conve_features(&mut g, s, r, kernel, bias, geom);
    assert_eq!(g.shape(f), (8, 2));
    for col in 0..2 {
        let image: Vec<f64> = sv.column(col).iter().chain(rv.column(col).iter()).copied().collect();
        let mut want = Vec::new();
        for filt in 0..2 {
            want.extend(naive_conv(&image, 6, 3, kv.row(filt).as_slice().unwrap(), 3, bv[[filt, 0]]));
        }
        for (a, b) in g.value(f).column(col).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn distmult_identities() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let sv = array![[0.3, -1.0], [2.0, 0.5], [-0.7, 4.0]];
    let s = g.input(sv.clone());
    let ones = g.input(Matrix::ones((3, 2)));
    let zeros = g.input(Matrix::zeros((3, 2)));
    let other = g.input(array![[1.5, 2.0], [-0.2, 0.1], [3.0, -3.0]]);
    let z = merge_distmult(&mut g, s, ones);
    assert_eq!(g.value(z), &sv);
    let z = merge_distmult(&mut g, s, zeros);
    assert!(g.value(z).iter().all(|&v| v == 0.0));
    let a = merge_distmult(&mut g, s, other);
    let b = merge_distmult(&mut g, other, s);
    assert_eq!(g.value(a), g.value(b));
}

#[test]
fn merge_rejects_mismatched_inputs() {
    let t = toy(None);
    let mut store = ParamStore::new();
    let bank = bank(&mut store, &t, &t.answers, 4);
    for cfg in [distmult(), conve(2, 2, 1, 2)] {
        let m = model(&mut store, &bank, &cfg);
        let mut g = Graph::new(&store);
        let s = g.input(Matrix::zeros((4, 2)));
        let r = g.input(Matrix::zeros((3, 2)));
        let err = m.merge(&mut g, s, r, &mut Mode::eval()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }
}

#[test]
fn config_errors() {
    let t = toy(None);
    let mut store = ParamStore::new();
    let b = bank(&mut store, &t, &t.answers, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for cfg in [conve(3, 5, 1, 3), conve(4, 4, 1, 5), conve(4, 4, 0, 3)] {
        let err = KglpModel::new(&mut store, &b, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
    assert!(matches!(conve(4, 4, 1, 3).validate(16, 8), Err(Error::Config(_))));
}

/// Answer sets over the two positive sentences: candidates CITY and ORGANIZATION.
fn two_candidates(t: &Toy) -> AnswerSets {
    let mut data = toy_dataset().type_substituted();
    data.sentences.truncate(2);
    let a = build_answer_sets(&data, &t.vocab, true).unwrap();
    assert_eq!(a.candidate_domain().len(), 2);
    a
}

#[test]
fn zero_z_scores_one_half() {
    let t = toy(None);
    let mut store = ParamStore::new();
    let bank = bank(&mut store, &t, &t.answers, 4);
    let probs = score_objects(&store, &bank, &t.answers, &Matrix::zeros((4, 3))).unwrap();
    assert!(probs.iter().all(|&p| p == 0.5));
}

#[test]
fn bias_is_monotone_per_candidate() {
    let t = toy(None);
    let mut store = ParamStore::new();
    let bank = bank(&mut store, &t, &t.answers, 4);
    let z = Matrix::from_shape_fn((4, 1), |(i, _)| 0.3 * i as f64 - 0.4);
    let before = score_objects(&store, &bank, &t.answers, &z).unwrap();
    store.value_mut(bank.kglp_bias)[[1, 0]] += 0.5;
    let after = score_objects(&store, &bank, &t.answers, &z).unwrap();
    assert!(after[[1, 0]] > before[[1, 0]]);
    for p in [0, 2] {
        assert_eq!(after[[p, 0]], before[[p, 0]]);
    }
}

#[test]
fn two_candidate_scores_match_hand_dot_products() {
    let t = toy(None);
    let answers = two_candidates(&t);
    let mut store = ParamStore::new();
    let bank = bank(&mut store, &t, &answers, 3);
    let dom = answers.candidate_domain().to_vec();
    let v = store.value_mut(bank.tokens);
    for (i, x) in [0.5, -1.0, 2.0].into_iter().enumerate() {
        v[[i, dom[0]]] = x;
    }
    for (i, x) in [1.0, 1.0, -0.5].into_iter().enumerate() {
        v[[i, dom[1]]] = x;
    }
    store.value_mut(bank.kglp_bias)[[1, 0]] = 0.25;
    let z = array![[0.2], [0.4], [-0.1]];
    let p = score_objects(&store, &bank, &answers, &z).unwrap();
    // 0.5*0.2 - 1.0*0.4 + 2.0*(-0.1) = -0.5 ; 0.2 + 0.4 + 0.05 + 0.25 = 0.9
    assert!((p[[0, 0]] - 1.0 / (1.0 + 0.5f64.exp())).abs() < 1e-12);
    assert!((p[[1, 0]] - 1.0 / (1.0 + (-0.9f64).exp())).abs() < 1e-12);

    // Candidates are scored independently.
    store.value_mut(bank.tokens)[[0, dom[0]]] = 9.0;
    let q = score_objects(&store, &bank, &answers, &z).unwrap();
    assert_ne!(q[[0, 0]], p[[0, 0]]);
    assert_eq!(q[[1, 0]], p[[1, 0]]);
}

#[test]
fn probabilities_follow_the_sigmoid_of_scores() {
    let t = toy(None);
    let mut store = ParamStore::new();
    let bank = bank(&mut store, &t, &t.answers, 4);
    let m = model(&mut store, &bank, &distmult());
    fill_params(&mut store, 0.8);
    let batch = t.batch(&[0, 1, 2]);
    let out = forward_kglp(&store, &m, &bank, &t.answers, &batch).unwrap();
    let v = store.value(bank.tokens);
    let b = store.value(bank.kglp_bias);
    for (p, &o) in t.answers.candidate_domain().iter().enumerate() {
        for col in 0..3 {
            let dot: f64 = (0..4).map(|i| v[[i, o]] * out.z[[i, col]]).sum();
            assert!((out.obj_probs[[p, col]] - sigmoid(dot + b[[p, 0]])).abs() < 1e-14);
        }
    }
}

#[test]
fn link_prediction_gradients_match_finite_differences() {
    let t = toy(None);
    for cfg in [distmult(), conve(2, 2, 2, 2)] {
        let mut store = ParamStore::new();
        let bank = bank(&mut store, &t, &t.answers, 4);
        let m = model(&mut store, &bank, &cfg);
        fill_params(&mut store, 0.7);
        let batch = t.batch(&[0, 1, 2]);
        let ids: Vec<_> = store.ids().collect();
        let err = gradient_error(&mut store, &ids, 1e-5, |g| {
            let nodes = m.forward(g, &batch, &bank, &t.answers, &mut Mode::eval()).unwrap();
            loss_kglp(g, &batch, nodes.logits, Reduction::Sum).unwrap()
        });
        assert!(err < 1e-6, "{}: {err}", cfg.merge);
    }
}
