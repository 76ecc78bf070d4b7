mod common;

use pll_core::networks::{EncoderConfig, ModelState};
use pll_core::numerics::{Graph, Tensor};

#[test]
fn every_op_matches_central_differences() {
    for case in common::cases() {
        for seed in 0..20 {
            let err = common::relative_error(&case, seed);
            assert!(err < 1e-4, "{} at seed {seed}: relative error {err:e}", case.name);
        }
    }
}

#[test]
fn network_gradient_matches_central_differences_for_first_layer_bias() {
    let mut cfg = EncoderConfig::new(5, 3);
    cfg.hidden = vec![8];
    cfg.d_emb = 4;
    let model = ModelState::new(cfg, 11).unwrap();
    let x = Tensor::new(vec![2, 5], (0..10).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let targets = Tensor::from_rows(&[vec![0.2, 0.5, 0.3], vec![1.0, 0.0, 0.0]]).unwrap();

    let loss = |m: &ModelState| -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let bound = m.bind(&mut g);
        let xv = g.constant(x.clone());
        let h = bound.backbone(&mut g, xv).unwrap();
        let lp = bound.classify(&mut g, h).unwrap();
        let l = g.soft_cross_entropy(lp, targets.clone(), vec![0, 1], 2.0).unwrap();
        let grads = g.backward(l).unwrap();
        let mut params = m.params().to_vec();
        params.iter_mut().for_each(|p| p.zero_grad());
        grads.accumulate_into(&g, &mut params).unwrap();
        (g.value(l).item(), params[1].grad.data().to_vec())
    };

    let (_, analytic) = loss(&model);
    let h = 1e-6;
    for k in 0..analytic.len() {
        let mut plus = model.clone();
        plus.params_mut()[1].value.data_mut()[k] += h;
        let mut minus = model.clone();
        minus.params_mut()[1].value.data_mut()[k] -= h;
        let numeric = (loss(&plus).0 - loss(&minus).0) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
        assert!(
            (analytic[k] - numeric).abs() / scale < 1e-4,
            "bias {k}: analytic {} numeric {numeric}",
            analytic[k]
        );
    }
}
