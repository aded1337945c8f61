//! Analytic parameter counts of the preset variants.

use vitkit::vit::{parameter_count, preset_config, Variant};

fn main() {
    for v in Variant::ALL {
        let c = preset_config(v);
        println!(
            "{v:>8}: P={:>2} L={:>2} D={:>4} MLP={:>4} heads={:>2} res={} classes={} -> {:>11} params",
            c.patch_size,
            c.layers,
            c.hidden_size,
            c.mlp_size,
            c.heads,
            c.image_resolution,
            c.num_classes,
            parameter_count(&c)
        );
    }
}
