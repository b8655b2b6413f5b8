//! Prints the ten boundary-context regions of a proposal and their area ratios.

use ban::geometry::{generate_context, BBox, ContextKind};

fn main() {
    let proposal = BBox::new(64.0, 48.0, 30.0, 24.0).expect("valid box");
    println!("proposal {proposal}");
    for kind in ContextKind::ALL {
        let region = generate_context(&proposal, kind);
        println!(
            "{:>5}  {region}  area ratio {:.4}",
            kind.table_name(),
            region.area() / proposal.area()
        );
    }
}
