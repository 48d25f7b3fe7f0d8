//! Compares reverse-mode gradients of a gated cross layer with central
//! finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rank_moe::autodiff::{Graph, ModelParams, Tensor};
use rank_moe::encoders::GatedCross;

fn loss(params: &ModelParams<f64>, layer: &GatedCross, c0: &Tensor<f64>) -> (f64, Vec<(String, Vec<f64>)>) {
    let mut g = Graph::with_params(params);
    let x = g.input(c0.clone()).unwrap();
    let c = layer.forward(&mut g, x).unwrap();
    let sq = g.mul(c, c).unwrap();
    let l = g.sum(sq).unwrap();
    let grads = g.backward(l).unwrap();
    let named = grads.params().map(|(n, v)| (n.to_string(), v.to_vec())).collect();
    (g.scalar(l), named)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = GatedCross::new("gcn", 4);
    let mut params = ModelParams::<f64>::new();
    layer.init(&mut params, &mut rng).unwrap();
    let c0 = Tensor::new(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();

    let (_, grads) = loss(&params, &layer, &c0);
    let eps = 1e-4;
    for (name, analytic) in grads {
        let mut worst: f64 = 0.0;
        for (i, a) in analytic.iter().enumerate() {
            let mut p = params.clone();
            p.get_mut(&name).unwrap().data_mut()[i] += eps;
            let up = loss(&p, &layer, &c0).0;
            p.get_mut(&name).unwrap().data_mut()[i] -= 2.0 * eps;
            let down = loss(&p, &layer, &c0).0;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
        }
        println!("{name:<8} {} entries, worst relative error {worst:.2e}", analytic.len());
    }
}
