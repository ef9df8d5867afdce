//! Finite-difference checks of every hand-written backward pass.

use esrt_nn::{
    grad_check, AdaptedLinear, FeedForward, LayerNormLayer, LinearLayer, LoraAdapter,
    MultiHeadAttention, ParamRng, Params, Tensor, TransformerBlock,
};

const EPS: f32 = 1e-2;
const TOL: f64 = 2e-3;

/// Fixed random projection turning an output tensor into a scalar loss.
fn probe_weights(shape: &[usize], seed: u64) -> Tensor {
    ParamRng::new(seed).normal(shape, 1.0)
}

fn weighted_sum(y: &Tensor, w: &Tensor) -> f64 {
    y.data()
        .iter()
        .zip(w.data())
        .map(|(a, b)| *a as f64 * *b as f64)
        .sum()
}

#[test]
fn linear_input_and_weight_gradients() {
    let mut rng = ParamRng::new(1);
    let layer = LinearLayer::init(&mut rng, 5, 3, 0.5);
    let x = rng.normal(&[4, 5], 1.0);
    let w = probe_weights(&[4, 3], 99);
    let (dx, g) = layer.backward(&x, &w).unwrap();
    let err = grad_check(|t| weighted_sum(&layer.forward(t).unwrap(), &w), &x, &dx, EPS).unwrap();
    assert!(err < TOL, "dx {err}");
    let err = grad_check(
        |t| {
            let l = LinearLayer::new(t.clone(), layer.bias.clone()).unwrap();
            weighted_sum(&l.forward(&x).unwrap(), &w)
        },
        &layer.weight,
        &g.weight,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "dw {err}");
}

#[test]
fn lora_gradients() {
    let mut rng = ParamRng::new(2);
    let base = LinearLayer::init(&mut rng, 6, 4, 0.3);
    let mut adapter = LoraAdapter::init(&mut rng, 6, 4, 2, 4.0);
    adapter.b = rng.normal(&[2, 4], 0.3);
    let layer = AdaptedLinear::with_adapter(base, adapter).unwrap();
    let x = rng.normal(&[3, 6], 1.0);
    let w = probe_weights(&[3, 4], 5);
    let (dx, g) = layer.backward(&x, &w).unwrap();
    let err = grad_check(|t| weighted_sum(&layer.forward(t).unwrap(), &w), &x, &dx, EPS).unwrap();
    assert!(err < TOL, "dx {err}");
    let gl = g.lora.unwrap();
    let l0 = layer.lora.clone().unwrap();
    let err = grad_check(
        |t| {
            let mut l = layer.clone();
            l.lora.as_mut().unwrap().a = t.clone();
            weighted_sum(&l.forward(&x).unwrap(), &w)
        },
        &l0.a,
        &gl.a,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "da {err}");
    let err = grad_check(
        |t| {
            let mut l = layer.clone();
            l.lora.as_mut().unwrap().b = t.clone();
            weighted_sum(&l.forward(&x).unwrap(), &w)
        },
        &l0.b,
        &gl.b,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "db {err}");
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ParamRng::new(3);
    let mut ln = LayerNormLayer::new(6);
    ln.gamma = rng.normal(&[6], 1.0);
    ln.beta = rng.normal(&[6], 1.0);
    let x = rng.normal(&[3, 6], 2.0);
    let w = probe_weights(&[3, 6], 7);
    let (_, cache) = ln.forward_cached(&x).unwrap();
    let (dx, g) = ln.backward(&w, &cache);
    let err = grad_check(|t| weighted_sum(&ln.forward(t).unwrap(), &w), &x, &dx, EPS).unwrap();
    assert!(err < TOL, "dx {err}");
    let err = grad_check(
        |t| {
            let mut l = ln.clone();
            l.gamma = t.clone();
            weighted_sum(&l.forward(&x).unwrap(), &w)
        },
        &ln.gamma,
        &g.gamma,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "dgamma {err}");
}

#[test]
fn attention_gradients_self_and_cross() {
    for causal in [false, true] {
        let mut rng = ParamRng::new(4);
        let mha = MultiHeadAttention::init(&mut rng, 8, 5, 2, causal, 0.4).unwrap();
        let xq = rng.normal(&[4, 8], 1.0);
        let xkv = rng.normal(&[4, 5], 1.0);
        let w = probe_weights(&[4, 8], 11);
        let (_, cache) = mha.forward_cached(&xq, &xkv).unwrap();
        let (dxq, dxkv, g) = mha.backward(&w, &cache).unwrap();
        let err =
            grad_check(|t| weighted_sum(&mha.forward(t, &xkv).unwrap(), &w), &xq, &dxq, EPS).unwrap();
        assert!(err < TOL, "dxq {err}");
        let err =
            grad_check(|t| weighted_sum(&mha.forward(&xq, t).unwrap(), &w), &xkv, &dxkv, EPS).unwrap();
        assert!(err < TOL, "dxkv {err}");
        let err = grad_check(
            |t| {
                let mut m = mha.clone();
                m.wk.base.weight = t.clone();
                weighted_sum(&m.forward(&xq, &xkv).unwrap(), &w)
            },
            &mha.wk.base.weight,
            &g.wk.base.weight,
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "dwk {err}");
    }
}

#[test]
fn feed_forward_gradients() {
    let mut rng = ParamRng::new(5);
    let ffn = FeedForward::init(&mut rng, 4, 8, 3, 0.5);
    let x = rng.normal(&[3, 4], 1.0);
    let w = probe_weights(&[3, 3], 13);
    let (_, cache) = ffn.forward_cached(&x).unwrap();
    let (dx, g) = ffn.backward(&w, &cache).unwrap();
    let err = grad_check(|t| weighted_sum(&ffn.forward(t).unwrap(), &w), &x, &dx, EPS).unwrap();
    assert!(err < TOL, "dx {err}");
    let err = grad_check(
        |t| {
            let mut f = ffn.clone();
            f.up.weight = t.clone();
            weighted_sum(&f.forward(&x).unwrap(), &w)
        },
        &ffn.up.weight,
        &g.up.weight,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "dup {err}");
}

#[test]
fn transformer_block_gradients() {
    let mut rng = ParamRng::new(6);
    let x = rng.normal(&[5, 8], 1.0);
    let ctx = rng.normal(&[7, 6], 1.0);
    let w = probe_weights(&[5, 8], 17);

    let block = TransformerBlock::init(&mut rng, 8, None, 2, true, 0.3).unwrap();
    let (_, cache) = block.forward_cached(&x, None).unwrap();
    let (dx, dctx, g) = block.backward(&w, &cache).unwrap();
    assert!(dctx.is_none());
    let err = grad_check(|t| weighted_sum(&block.forward(t, None).unwrap(), &w), &x, &dx, EPS).unwrap();
    assert!(err < TOL, "self dx {err}");
    let err = grad_check(
        |t| {
            let mut b = block.clone();
            b.ln_attn.gamma = t.clone();
            weighted_sum(&b.forward(&x, None).unwrap(), &w)
        },
        &block.ln_attn.gamma,
        &g.ln_attn.gamma,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "ln gamma {err}");

    let cross = TransformerBlock::init(&mut rng, 8, Some(6), 2, false, 0.3).unwrap();
    let (_, cache) = cross.forward_cached(&x, Some(&ctx)).unwrap();
    let (dx, dctx, _) = cross.backward(&w, &cache).unwrap();
    let err = grad_check(
        |t| weighted_sum(&cross.forward(t, Some(&ctx)).unwrap(), &w),
        &x,
        &dx,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "cross dx {err}");
    let err = grad_check(
        |t| weighted_sum(&cross.forward(&x, Some(t)).unwrap(), &w),
        &ctx,
        &dctx.unwrap(),
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "cross dctx {err}");
}

#[test]
fn sgd_step_moves_against_gradient() {
    let mut layer = LinearLayer::init(&mut ParamRng::new(8), 2, 2, 1.0);
    let before = layer.clone();
    let mut g = layer.zeros_like();
    g.weight.fill(1.0);
    layer.sgd_step(&g, 0.5);
    assert_eq!(layer.weight, before.weight.map(|v| v - 0.5));
    assert_eq!(layer.bias, before.bias);
}
