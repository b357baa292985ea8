//! Microlens focal-length trade study: sweep the EFL across the vendor
//! catalog range, watch the pupil fill and neighbor crosstalk move, and
//! pick the best lens. Add Monte Carlo manufacturing scatter on top.
//! `cargo run --example efl_sweep`.

use ionoptics::diffraction::{
    efl_grid, mla_tolerance_sweep, sample_mla_perturbations, select_best_efl, ChannelGeometry,
    MlaPerturbation, PupilSpec, SamplingSpec,
};

fn main() -> ionoptics::Result<()> {
    let geom = ChannelGeometry::reference();
    let pupil = PupilSpec::reference();
    let grid = SamplingSpec { pupil_samples: 512, padding: 16 };
    let fiber_mfd = 3.3e-6;

    // nominal sweep over the catalog range
    let efls = efl_grid(0.525e-3, 1.0e-3, 0.025e-3)?;
    let nominal: Vec<MlaPerturbation> =
        efls.iter().map(|&f| MlaPerturbation::nominal(f)).collect();
    let rows = mla_tolerance_sweep(&geom, &pupil, fiber_mfd, &grid, &nominal)?;

    println!("{:>9} {:>12} {:>14} {:>14}", "efl (mm)", "pupil fill", "defocus (wv)", "crosstalk");
    for r in &rows {
        println!(
            "{:>9.3} {:>12.4} {:>14.2e} {:>14.3e}",
            r.perturbation.efl * 1e3,
            r.pupil_fill,
            r.defocus_waves,
            r.crosstalk
        );
    }
    let best = select_best_efl(&rows)?;
    println!(
        "\nbest lens: {:.3} mm (crosstalk {:.3e}); catalog edges pay 5-6 \
         decades for the wrong fill\n",
        best.perturbation.efl * 1e3,
        best.crosstalk
    );

    // same sweep with manufacturing scatter: 2 um sigma on EFL, 0.5 um
    // decenter, five draws per catalog lens, seeded for reproducibility
    let seed = 7;
    let perturbed = sample_mla_perturbations(&efls, 2e-6, 0.5e-6, 5, seed)?;
    let mc = mla_tolerance_sweep(&geom, &pupil, fiber_mfd, &grid, &perturbed)?;
    let worst_at = |efl: f64| -> f64 {
        mc.iter()
            .filter(|r| (r.perturbation.efl - efl).abs() < 1e-9)
            .map(|r| r.crosstalk)
            .fold(f64::MIN, f64::max)
    };
    println!("with manufacturing scatter (worst of 5 draws per lens):");
    for &efl in [0.55e-3, best.perturbation.efl, 0.95e-3].iter() {
        println!("  efl {:.3} mm: worst crosstalk {:.3e}", efl * 1e3, worst_at(efl));
    }
    println!(
        "\nDecenter breaks the left/right symmetry and defocus error fills \
         in the nulls, so the scattered worst case\nsits well above the \
         nominal curve; the tolerance CLI verb writes the full table."
    );
    Ok(())
}
