mod common;

use common::{gradient_check, mini_network};
use millwatch::nn::Layer;

#[test]
fn mini_networks_cover_every_layer_kind() {
    for seed in 0..10 {
        let (net, _, _) = mini_network(seed);
        let kinds: Vec<&str> = net.layers.iter().map(Layer::kind_name).collect();
        for k in ["Conv1D", "MaxPool1D", "ReLU", "BatchNorm1D", "Linear"] {
            assert!(kinds.contains(&k), "seed {seed}: {kinds:?}");
        }
    }
}

#[test]
fn backprop_matches_central_differences_on_100_networks() {
    let worst = (0..100)
        .map(|seed| (seed, gradient_check(seed, 1e-5)))
        .fold((0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    assert!(
        worst.1 <= 1e-4,
        "seed {} relative error {:e}",
        worst.0,
        worst.1
    );
}
