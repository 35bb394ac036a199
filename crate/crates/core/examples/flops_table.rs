//! Bit-width-scaled FLOPs per layer for the standard network.

use saliq::model::{count_flops, Architecture, BitConfig};

fn main() {
    let arch = Architecture::STANDARD;
    println!("{:<8} {:>12} {:>12} {:>12} {:>8} {:>14}", "config", "conv1", "conv2", "fc1", "fc2", "total");
    for bits in BitConfig::all_presets() {
        let r = count_flops(&arch, bits);
        let cells: Vec<String> = r.layers.iter().map(|l| format!("{}", l.scaled)).collect();
        println!(
            "{:<8} {:>12} {:>12} {:>12} {:>8} {:>14}",
            bits.slug(),
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            r.total
        );
    }
    let full = count_flops(&arch, BitConfig::REGULAR).total;
    let low = count_flops(&arch, BitConfig::quantized(2, 2).unwrap()).total;
    println!("\nregular / (2,2) = {:.3}; the dense layers dominate the quantized totals", full / low);
}
