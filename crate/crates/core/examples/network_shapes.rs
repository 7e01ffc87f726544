//! Prints the three networks layer by layer with the tensor shape each
//! stage produces and the parameter counts.
//!
//! ```text
//! cargo run --example network_shapes
//! ```

use railscan::model::{build_networks, ArchConfig, LayerKind};
use railscan::Network;

fn print_network(name: &str, net: &Network) -> railscan::Result<()> {
    println!("{name}  input {}", net.input_shape());
    let shapes = net.stage_shapes(1)?;
    for (i, (spec, shape)) in net.layers().iter().zip(shapes).enumerate() {
        let kind = match spec.kind {
            LayerKind::StridedConv => "conv",
            LayerKind::TransposedConv => "deconv",
            LayerKind::FlattenProjection => "project",
        };
        println!(
            "  {i}  {kind:<8} k{} s{} p{} op{}  {:>4} filters  bn {:<5}  {:?}  dropout {:.1}  -> {shape}",
            spec.kernel,
            spec.stride,
            spec.padding,
            spec.output_padding,
            spec.filters,
            spec.batch_norm,
            spec.activation,
            spec.dropout_rate,
        );
    }
    println!("  parameters: {}\n", net.parameter_count());
    Ok(())
}

fn main() -> railscan::Result<()> {
    let nets = build_networks(0, &ArchConfig::default());
    print_network("encoder", &nets.encoder)?;
    print_network("decoder", &nets.decoder)?;
    print_network("discriminator", &nets.discriminator)?;
    Ok(())
}
