use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steer_core::model::dave2::{dave2_conv_shapes, dave2_flatten_len};
use steer_core::model::{
    lstm_cell, Builder, CrossModalEncoderLayer, Model, ModelConfig, ModelInput, ModelKind,
    ParamStore, ResidualBackbone, Stream,
};
use steer_core::tensor::{grad_check_many, Graph, Tensor, Var};
use steer_core::Error;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn images(batch: usize, cfg: &ModelConfig, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[batch, cfg.seq_len, 3, cfg.input_h, cfg.input_w], |_| {
        rng.gen()
    })
}

fn input_for(cfg: &ModelConfig, batch: usize, seed: u64) -> ModelInput {
    ModelInput {
        rgb: images(batch, cfg, seed),
        flow: cfg
            .kind
            .uses_flow()
            .then(|| images(batch, cfg, seed + 1000)),
    }
}

fn zero_params(model: &mut Model, prefix: &str) {
    let names: Vec<String> = model
        .params()
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, _)| n.to_owned())
        .collect();
    assert!(!names.is_empty(), "no params under {prefix}");
    for n in names {
        let t = model.params_mut().get_mut(&n).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn dave2_layer_arithmetic() {
    let shapes = dave2_conv_shapes(120, 320).unwrap();
    assert_eq!(
        shapes,
        vec![
            [24, 58, 158],
            [36, 27, 77],
            [48, 12, 37],
            [64, 10, 35],
            [64, 8, 33]
        ]
    );
    assert_eq!(dave2_flatten_len(120, 320).unwrap(), 16896);
    assert_eq!(dave2_flatten_len(66, 200).unwrap(), 1152);
    assert!(dave2_conv_shapes(40, 40).is_err());
}

#[test]
fn dave2_zero_weights_predict_zero() {
    let cfg = ModelConfig::for_kind(ModelKind::Dave2);
    let mut model = Model::new(cfg.clone(), 1).unwrap();
    let out = model.predict(&input_for(&cfg, 2, 5)).unwrap();
    assert_eq!(out.angle.shape(), &[2, 1]);
    assert!(out.speed.is_none() && out.attention.is_empty());

    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_owned()).collect();
    for n in names {
        model.params_mut().get_mut(&n).unwrap().data_mut().fill(0.0);
    }
    let out = model.predict(&input_for(&cfg, 2, 6)).unwrap();
    assert_eq!(out.angle.data(), &[0.0, 0.0]);
}

#[test]
fn dave2_rejects_wrong_resolution() {
    let cfg = ModelConfig::for_kind(ModelKind::Dave2);
    let model = Model::new(cfg.clone(), 1).unwrap();
    let mut wrong = cfg.clone();
    wrong.input_h = 66;
    wrong.input_w = 200;
    assert!(matches!(
        model.predict(&input_for(&wrong, 1, 0)),
        Err(Error::Dimension(_))
    ));
}

fn backbone_fixture(cfg: &ModelConfig) -> (ParamStore, ResidualBackbone) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bb = ResidualBackbone::with_store(&mut store, &mut rng, "bb", cfg);
    (store, bb)
}

#[test]
fn backbone_feature_length_for_several_sizes() {
    for (h, w) in [(8, 8), (12, 16), (9, 23)] {
        let cfg = ModelConfig {
            input_h: h,
            input_w: w,
            ..ModelConfig::miniature(ModelKind::ResnetReg, 1)
        };
        let (store, bb) = backbone_fixture(&cfg);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(random(&[3, 3, h, w], 2));
        let f = bb.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(f), &[3, cfg.feature_dim]);
    }
}

#[test]
fn backbone_zero_projection_gives_zero_features() {
    let cfg = ModelConfig::miniature(ModelKind::ResnetReg, 1);
    let (mut store, bb) = backbone_fixture(&cfg);
    store.get_mut("bb.proj.w").unwrap().data_mut().fill(0.0);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(random(&[2, 3, 8, 8], 3));
    let f = bb.forward(&mut g, &p, x).unwrap();
    assert!(g.value(f).data().iter().all(|&v| v == 0.0));
}

#[test]
fn backbone_rejects_too_small_input() {
    let cfg = ModelConfig {
        stem_stride: 2,
        ..ModelConfig::miniature(ModelKind::ResnetReg, 1)
    };
    let (store, bb) = backbone_fixture(&cfg);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(random(&[1, 3, 3, 8], 3));
    assert!(matches!(
        bb.forward(&mut g, &p, x),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn residual_block_with_zero_convs_is_relu() {
    let cfg = ModelConfig::miniature(ModelKind::ResnetReg, 1);
    let (mut store, bb) = backbone_fixture(&cfg);
    let names: Vec<String> = store
        .iter()
        .filter(|(n, _)| n.starts_with("bb.block1."))
        .map(|(n, _)| n.to_owned())
        .collect();
    assert_eq!(names.len(), 4);
    for n in names {
        store.get_mut(&n).unwrap().data_mut().fill(0.0);
    }
    let input = random(&[2, 3, 5, 6], 4);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(input.clone());
    let y = bb.blocks()[1].forward(&mut g, &p, x).unwrap();
    assert_eq!(g.value(y), &input.map(|v| v.max(0.0)));
}

struct LstmFixture {
    store: ParamStore,
    w: steer_core::model::LstmWeights,
}

fn lstm_fixture(input: usize, hidden: usize, seed: u64) -> LstmFixture {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Builder::new(&mut store, &mut rng).lstm("cell", input, hidden);
    LstmFixture { store, w }
}

fn run_cell(fx: &LstmFixture, x: &Tensor, h: &Tensor, c: &Tensor) -> (Tensor, Tensor) {
    let mut g = Graph::new();
    let p = fx.store.bind(&mut g, false);
    let (xv, hv, cv) = (
        g.constant(x.clone()),
        g.constant(h.clone()),
        g.constant(c.clone()),
    );
    let (h2, c2) = lstm_cell(&mut g, &p, &fx.w, xv, hv, cv).unwrap();
    (g.value(h2).clone(), g.value(c2).clone())
}

#[test]
fn lstm_zero_weights_zero_state() {
    let mut fx = lstm_fixture(3, 4, 0);
    for t in fx.store.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let (h, c) = run_cell(
        &fx,
        &random(&[2, 3], 1),
        &Tensor::zeros(&[2, 4]),
        &Tensor::zeros(&[2, 4]),
    );
    assert!(h.data().iter().chain(c.data()).all(|&v| v == 0.0));
}

#[test]
fn lstm_open_forget_gate_carries_memory() {
    let mut fx = lstm_fixture(3, 2, 0);
    for t in fx.store.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    // i closed, f open, o open
    fx.store
        .set(
            "cell.b",
            Tensor::new(&[8], vec![-40.0, -40.0, 40.0, 40.0, 0.0, 0.0, 40.0, 40.0]).unwrap(),
        )
        .unwrap();
    let c0 = Tensor::new(&[1, 2], vec![0.7, -0.3]).unwrap();
    let (h, c) = run_cell(&fx, &random(&[1, 3], 2), &Tensor::zeros(&[1, 2]), &c0);
    assert!(c.max_abs_diff(&c0) < 1e-12);
    assert!(h.max_abs_diff(&c0.map(f64::tanh)) < 1e-12);
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lstm_matches_reference_gates() {
    let (n_in, n_h, batch) = (3, 4, 2);
    let fx = lstm_fixture(n_in, n_h, 17);
    let x = random(&[batch, n_in], 3);
    let h = random(&[batch, n_h], 4);
    let c = random(&[batch, n_h], 5);
    let (h2, c2) = run_cell(&fx, &x, &h, &c);

    let w_ih = fx.store.get("cell.w_ih").unwrap();
    let w_hh = fx.store.get("cell.w_hh").unwrap();
    let b = fx.store.get("cell.b").unwrap();
    for r in 0..batch {
        let pre = |gate: usize, j: usize| {
            let col = gate * n_h + j;
            let mut s = b.get(&[col]);
            for k in 0..n_in {
                s += x.get(&[r, k]) * w_ih.get(&[k, col]);
            }
            for k in 0..n_h {
                s += h.get(&[r, k]) * w_hh.get(&[k, col]);
            }
            s
        };
        for j in 0..n_h {
            let i = sigmoid(pre(0, j));
            let f = sigmoid(pre(1, j));
            let gg = pre(2, j).tanh();
            let o = sigmoid(pre(3, j));
            let c_new = f * c.get(&[r, j]) + i * gg;
            let h_new = o * c_new.tanh();
            assert!((c2.get(&[r, j]) - c_new).abs() < 1e-12);
            assert!((h2.get(&[r, j]) - h_new).abs() < 1e-12);
        }
    }
}

#[test]
fn cnn_lstm_shapes_zero_head_and_causality() {
    let cfg = ModelConfig::miniature(ModelKind::CnnLstm, 4);
    let mut model = Model::new(cfg.clone(), 2).unwrap();
    let input = input_for(&cfg, 2, 8);
    let base = model.predict(&input).unwrap();
    assert_eq!(base.angle.shape(), &[2, 4]);

    // changing frame t=2 of sample 0 leaves steps 0..2 untouched
    let mut later = input.clone();
    let frame = 3 * 8 * 8;
    for v in &mut later.rgb.data_mut()[2 * frame..3 * frame] {
        *v = 1.0 - *v;
    }
    let moved = model.predict(&later).unwrap();
    for t in 0..2 {
        assert_eq!(moved.angle.get(&[0, t]), base.angle.get(&[0, t]));
    }
    assert!((2..4).any(|t| moved.angle.get(&[0, t]) != base.angle.get(&[0, t])));
    assert_eq!(
        moved.angle.slice_outer(1, 1).unwrap(),
        base.angle.slice_outer(1, 1).unwrap()
    );

    zero_params(&mut model, "head_angle");
    let out = model.predict(&input).unwrap();
    assert!(out.angle.data().iter().all(|&v| v == 0.0));
}

fn layer_fixture(
    dim: usize,
    heads: usize,
    with_flow: bool,
) -> (ParamStore, CrossModalEncoderLayer) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let layer = CrossModalEncoderLayer::with_store(
        &mut store,
        &mut rng,
        "enc",
        dim,
        2 * dim,
        heads,
        with_flow,
    );
    (store, layer)
}

/// Runs one layer and returns (flow-branch attention values, rgb-branch attention values).
fn layer_attention(
    store: &ParamStore,
    layer: &CrossModalEncoderLayer,
    rgb: &Tensor,
    flow: &Tensor,
    seq_len: usize,
) -> (Vec<Tensor>, Vec<Tensor>, Tensor) {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let (r, f) = (g.constant(rgb.clone()), g.constant(flow.clone()));
    let (_, f_out, att) = layer.forward(&mut g, &p, r, Some(f), seq_len).unwrap();
    let collect = |maps: &Vec<Vec<Var>>| {
        maps.iter()
            .flatten()
            .map(|&v| g.value(v).clone())
            .collect::<Vec<_>>()
    };
    (
        collect(att.flow.as_ref().unwrap()),
        collect(&att.rgb),
        g.value(f_out.unwrap()).clone(),
    )
}

#[test]
fn cross_modal_single_position_attends_to_itself() {
    let (store, layer) = layer_fixture(8, 4, true);
    let (flow_w, rgb_w, _) =
        layer_attention(&store, &layer, &random(&[3, 8], 1), &random(&[3, 8], 2), 1);
    assert_eq!(flow_w.len(), 4 * 3);
    for w in flow_w.iter().chain(&rgb_w) {
        assert_eq!(w.shape(), &[1, 1]);
        assert_eq!(w.item(), 1.0);
    }
}

#[test]
fn cross_modal_identical_rgb_rows_give_uniform_attention() {
    let (store, layer) = layer_fixture(8, 2, true);
    let row = random(&[1, 8], 3);
    let rgb = Tensor::stack(&vec![row.reshape(&[8]).unwrap(); 5]).unwrap();
    let (flow_w, _, _) = layer_attention(&store, &layer, &rgb, &random(&[5, 8], 4), 5);
    for w in &flow_w {
        assert!(w.data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }
}

#[test]
fn cross_modal_flow_weights_ignore_flow_content() {
    let (store, layer) = layer_fixture(8, 4, true);
    let rgb = random(&[10, 8], 5);
    let (w_a, _, out_a) = layer_attention(&store, &layer, &rgb, &random(&[10, 8], 6), 5);
    let (w_b, _, out_b) = layer_attention(&store, &layer, &rgb, &random(&[10, 8], 7), 5);
    assert_eq!(w_a, w_b);
    assert!(out_a.max_abs_diff(&out_b) > 1e-3);

    let (w_c, _, _) = layer_attention(
        &store,
        &layer,
        &random(&[10, 8], 8),
        &random(&[10, 8], 6),
        5,
    );
    assert_ne!(w_a, w_c);
}

#[test]
fn cross_modal_rejects_stream_mismatch() {
    let (store, layer) = layer_fixture(8, 4, true);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let r = g.constant(random(&[4, 8], 1));
    let f = g.constant(random(&[6, 8], 1));
    assert!(matches!(
        layer.forward(&mut g, &p, r, Some(f), 2),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        layer.forward(&mut g, &p, r, None, 2),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        layer.forward(&mut g, &p, r, Some(r), 3),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn dual_output_structure() {
    let cfg = ModelConfig::miniature(ModelKind::DualTransformer, 3);
    let model = Model::new(cfg.clone(), 4).unwrap();
    let out = model.predict(&input_for(&cfg, 2, 1)).unwrap();
    assert_eq!(out.angle.shape(), &[2, 3]);
    assert_eq!(out.speed.as_ref().unwrap().shape(), &[2, 3]);
    assert_eq!(out.attention.len(), cfg.encoder_layers * 2 * cfg.heads);
    for m in &out.attention {
        assert_eq!(m.weights.shape(), &[2, 3, 3]);
        for row in m.weights.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
    let flow_maps = out
        .attention
        .iter()
        .filter(|m| m.branch == Stream::Flow)
        .count();
    assert_eq!(flow_maps, cfg.encoder_layers * cfg.heads);
}

#[test]
fn dual_zero_heads_predict_zero() {
    let cfg = ModelConfig::miniature(ModelKind::DualTransformer, 2);
    let mut model = Model::new(cfg.clone(), 4).unwrap();
    zero_params(&mut model, "head_");
    let out = model.predict(&input_for(&cfg, 2, 1)).unwrap();
    assert!(out
        .angle
        .data()
        .iter()
        .chain(out.speed.unwrap().data())
        .all(|&v| v == 0.0));
}

#[test]
fn flow_input_contract() {
    let dual = ModelConfig::miniature(ModelKind::DualTransformer, 2);
    let simple = ModelConfig::miniature(ModelKind::SimpleTransformer, 2);
    let d = Model::new(dual.clone(), 0).unwrap();
    let s = Model::new(simple.clone(), 0).unwrap();
    let mut no_flow = input_for(&dual, 1, 0);
    no_flow.flow = None;
    assert!(matches!(d.predict(&no_flow), Err(Error::Contract(_))));
    assert!(matches!(
        s.predict(&input_for(&dual, 1, 0)),
        Err(Error::Contract(_))
    ));
    assert!(s.predict(&no_flow).is_ok());
}

#[test]
fn simple_is_dual_without_flow_path() {
    let dual_cfg = ModelConfig::miniature(ModelKind::DualTransformer, 3);
    let simple_cfg = ModelConfig {
        predict_speed: false,
        ..ModelConfig::miniature(ModelKind::SimpleTransformer, 3)
    };
    let mut dual = Model::new(dual_cfg.clone(), 11).unwrap();
    let mut simple = Model::new(simple_cfg, 12).unwrap();
    assert!(simple.param_count() < dual.param_count());

    // silence the flow half of the fusion layer and share everything else
    let d = dual_cfg.feature_dim;
    let fuse = dual.params_mut().get_mut("fuse.w").unwrap();
    fuse.data_mut()[d * d..].fill(0.0);
    let rgb_half = fuse.slice_outer(0, d).unwrap();
    let names: Vec<String> = simple.params().iter().map(|(n, _)| n.to_owned()).collect();
    for n in names {
        let t = if n == "fuse.w" {
            rgb_half.clone()
        } else {
            dual.params()
                .get(&n)
                .unwrap_or_else(|| panic!("dual lacks {n}"))
                .clone()
        };
        simple.params_mut().set(&n, t).unwrap();
    }

    let input = input_for(&dual_cfg, 2, 3);
    let a = dual.predict(&input).unwrap();
    let b = simple
        .predict(&ModelInput {
            rgb: input.rgb.clone(),
            flow: None,
        })
        .unwrap();
    assert!(a.angle.max_abs_diff(&b.angle) < 1e-9);
    let rgb_maps = |o: &steer_core::model::ModelOutput| -> Vec<Tensor> {
        o.attention
            .iter()
            .filter(|m| m.branch == Stream::Rgb)
            .map(|m| m.weights.clone())
            .collect()
    };
    assert_eq!(rgb_maps(&a), rgb_maps(&b));
}

#[test]
fn batch_permutation_equivariance() {
    for kind in [
        ModelKind::ResnetReg,
        ModelKind::CnnLstm,
        ModelKind::DualTransformer,
    ] {
        let cfg = ModelConfig::miniature(kind, 2);
        let model = Model::new(cfg.clone(), 6).unwrap();
        let input = input_for(&cfg, 3, 2);
        let perm = [2, 0, 1];
        let permute = |t: &Tensor| {
            let parts: Vec<Tensor> = perm.iter().map(|&i| t.slice_outer(i, 1).unwrap()).collect();
            let joined: Vec<f64> = parts.iter().flat_map(|p| p.data().to_vec()).collect();
            Tensor::new(t.shape(), joined).unwrap()
        };
        let permuted = ModelInput {
            rgb: permute(&input.rgb),
            flow: input.flow.as_ref().map(permute),
        };
        let a = model.predict(&input).unwrap();
        let b = model.predict(&permuted).unwrap();
        assert!(permute(&a.angle).max_abs_diff(&b.angle) < 1e-12, "{kind}");
    }
}

#[test]
fn initialisation_is_seed_deterministic() {
    let cfg = ModelConfig::miniature(ModelKind::DualTransformer, 2);
    let a = Model::new(cfg.clone(), 5).unwrap();
    let b = Model::new(cfg.clone(), 5).unwrap();
    let c = Model::new(cfg, 6).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

/// Squared-output loss; gradients checked for the tensors picked by `select`.
fn model_grad_error(model: &Model, input: &ModelInput, select: impl Fn(&str) -> bool) -> f64 {
    let store = model.params();
    let picked: Vec<usize> = store
        .iter()
        .enumerate()
        .filter(|(_, (n, _))| select(n))
        .map(|(i, _)| i)
        .collect();
    assert!(!picked.is_empty());
    let checked: Vec<Tensor> = picked.iter().map(|&i| store.tensors()[i].clone()).collect();
    grad_check_many(
        |g, vars| {
            let mut p: Vec<Var> = store
                .tensors()
                .iter()
                .map(|t| g.constant(t.clone()))
                .collect();
            for (&i, &v) in picked.iter().zip(vars) {
                p[i] = v;
            }
            let fv = model.forward(g, &p, input)?;
            let sq = g.square(fv.angle);
            let mut loss = g.sum(sq);
            if let Some(s) = fv.speed {
                let sq = g.square(s);
                let ls = g.sum(sq);
                loss = g.add(loss, ls)?;
            }
            Ok(loss)
        },
        &checked,
        1e-6,
    )
    .unwrap()
}

/// Zero-initialised biases put ReLU inputs exactly on the kink wherever a
/// feature map is all zero; move them to a generic point first.
fn jitter_biases(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params_mut().tensors_mut() {
        if t.rank() == 1 {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
    }
}

#[test]
fn miniature_models_pass_gradient_check() {
    for kind in [
        ModelKind::ResnetReg,
        ModelKind::CnnLstm,
        ModelKind::SimpleTransformer,
        ModelKind::DualTransformer,
    ] {
        let cfg = ModelConfig::miniature(kind, 2);
        let mut model = Model::new(cfg.clone(), 13).unwrap();
        jitter_biases(&mut model, 1);
        let err = model_grad_error(&model, &input_for(&cfg, 1, 4), |_| true);
        assert!(err < 1e-4, "{kind}: {err:e}");
    }
}

#[test]
fn dave2_passes_gradient_check_on_selected_layers() {
    let cfg = ModelConfig {
        input_h: 61,
        input_w: 61,
        ..ModelConfig::for_kind(ModelKind::Dave2)
    };
    let mut model = Model::new(cfg.clone(), 2).unwrap();
    jitter_biases(&mut model, 2);
    let err = model_grad_error(&model, &input_for(&cfg, 1, 7), |n| {
        n.ends_with(".b") || n.starts_with("dave2.fc2") || n.starts_with("head_angle")
    });
    assert!(err < 1e-4, "{err:e}");
}
