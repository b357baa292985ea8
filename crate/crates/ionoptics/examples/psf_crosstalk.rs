//! Focal-plane intensity of one addressing beam and the relative
//! intensity spilled onto the neighboring ions, for the ideal objective
//! and for the aberration level that reproduces the measured bench.
//! `cargo run --example psf_crosstalk`.

use ionoptics::diffraction::{
    fill_from_geometry, neighbor_crosstalk, psf_1d, ChannelGeometry, PupilSpec, SamplingSpec,
};
use ionoptics::powerbudget::{crosstalk_rabi_error, neighbor_rotation, GateDrive};

fn main() -> ionoptics::Result<()> {
    let geom = ChannelGeometry::reference();
    let pupil = PupilSpec::reference();
    let fill = fill_from_geometry(&pupil, &geom)?;
    let grid = SamplingSpec { pupil_samples: 512, padding: 16 };
    println!(
        "NA {} objective, {} nm, pupil fill {:.4} (0.9 um spot), ions every {} um\n",
        pupil.numerical_aperture,
        pupil.wavelength * 1e9,
        fill,
        geom.ion_pitch * 1e6
    );

    // matched objective: spherical term fitted so the simulated neighbor
    // ratio reproduces the measured 1e-4 (see scenarios/matched.toml)
    let mut matched = pupil;
    matched.aberrations.spherical = 0.7407570337393514;

    println!(
        "{:<22} {:>14} {:>14} {:>12} {:>16}",
        "pupil", "left xt", "right xt", "rabi error", "pi-pulse rotation"
    );
    for (label, p) in [("diffraction-limited", &pupil), ("aberration-matched", &matched)] {
        let psf = psf_1d(p, fill, &grid)?;
        let (left, right) = neighbor_crosstalk(&psf, geom.ion_pitch)?;
        // a global-beam gate turns intensity crosstalk into a sqrt-sized
        // Rabi-rate error on the neighbor
        let err = crosstalk_rabi_error(left.max(right), GateDrive::GlobalBeam)?;
        println!(
            "{label:<22} {left:>14.3e} {right:>14.3e} {:>11.4}% {:>13.5} rad",
            err * 100.0,
            neighbor_rotation(true, err)
        );
    }

    // the PSF itself, coarsely, to show where that light actually is
    let psf = psf_1d(&pupil, fill, &grid)?;
    println!("\nideal profile, log10 intensity vs offset:");
    for k in 0..=8 {
        let x = k as f64 * 1e-6;
        let v = psf.value_at(x)?;
        println!("  {:>4.1} um  {:>8.3}  {}", x * 1e6, v.log10(), bar(v));
    }
    Ok(())
}

fn bar(v: f64) -> String {
    // 60 chars spanning 10 decades
    let n = ((v.log10() + 10.0) * 6.0).max(0.0) as usize;
    "#".repeat(n)
}
