//! Prints the layer table of both stacks with per-layer parameter counts.
//!
//! ```text
//! cargo run --example architecture
//! ```

use millwatch::model::{build_downstream, build_upstream};
use millwatch::nn::{Network, ParamConvention};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn print_stack(title: &str, net: &Network) {
    println!("{title}");
    for layer in &net.layers {
        println!(
            "  {:<18} {:>8}",
            layer.describe(),
            layer.param_count(ParamConvention::Paper)
        );
    }
    println!(
        "  {:<18} {:>8}  ({} trainable)\n",
        "total",
        net.count_parameters(ParamConvention::Paper),
        net.count_parameters(ParamConvention::Learnable)
    );
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    print_stack(
        "upstream (one 1x400 window -> 4 state scores)",
        &build_upstream(&mut rng),
    );
    print_stack(
        "downstream (8x4 score trajectory -> 7 class scores)",
        &build_downstream(&mut rng),
    );
}
