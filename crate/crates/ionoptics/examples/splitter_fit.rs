//! Recover the internal coupler ratios of a 1x16 splitter tree from one
//! set of measured output powers, then ask what temperature drift does
//! to the balance. `cargo run --example splitter_fit`.

use std::path::Path;

use ionoptics::splitter::{
    calibrate_uniform_thermal, fit_tree, forward_powers, read_measured_csv_file,
    thermal_sensitivity,
};

fn main() -> ionoptics::Result<()> {
    let csv = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/measured_demo.csv");
    let measured = read_measured_csv_file(&csv)?.normalize()?;

    // the tree is binary, so each coupler split is just the power ratio
    // between the two subtrees it feeds; the fit is exact, not iterative
    let tree = fit_tree(&measured, 4)?;
    println!("fitted depth-{} tree, {} couplers:", tree.depth, tree.couplers.len());
    for (i, c) in tree.couplers.iter().enumerate() {
        let level = (i + 1).ilog2();
        println!(
            "  {:indent$}coupler {:>2}: split {:.4}",
            "",
            i + 1,
            c.split_fraction,
            indent = 2 * level as usize
        );
    }

    // round trip: the fitted tree reproduces the measurement exactly
    let round = forward_powers(&tree, tree.reference_temp)?;
    let worst = round
        .powers
        .iter()
        .zip(&measured.powers)
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0f64, f64::max);
    println!("\nforward(fit(measured)) worst relative error: {worst:.2e}");

    // thermal what-if: calibrate the uniform drift coefficient to a 0.6%
    // worst-case leaf change over the lab's 20-26 C swing
    let drifting = calibrate_uniform_thermal(&tree, (20.0, 26.0), 0.006)?;
    println!(
        "thermal coefficient for 0.6% drift over 20-26 C: {:.3e} per K",
        drifting.couplers[0].thermal_coeff
    );
    for t in [20.0, 23.0, 26.0] {
        println!(
            "  at {t:>4.1} C: worst leaf change {:.3}%",
            100.0 * thermal_sensitivity(&drifting, (t, t))?
        );
    }
    Ok(())
}
