//! Picosecond pulses only interfere where they overlap in time, so every
//! channel's optical path must match the reference to a fraction of the
//! 3 mm pulse length. Quantized delay stages absorb most of it; what
//! they cannot, a fiber re-splice does. `cargo run --example path_matching`.

use ionoptics::profiles::fringe_contrast;
use ionoptics::pulsematch::{
    fringe_pattern, optimize_stage, splice_plan, visibility, ChannelPath, DelayStage, PulseSpec,
};

fn main() -> ionoptics::Result<()> {
    let pulse = PulseSpec::new(10e-12, 532e-9)?;
    println!(
        "10 ps pulses: length {:.2} mm, visibility at one stage step (210 um): {:.5}\n",
        pulse.pulse_length() * 1e3,
        visibility(&pulse, 210e-6)
    );

    // as-built length offsets for four representative channels
    let offsets = [-1.0e-3, -2.73e-3, 0.5e-3, -5.0e-3];
    let stage = DelayStage::new(4e-3, 210e-6)?;
    let paths: Vec<ChannelPath> = offsets
        .iter()
        .enumerate()
        .map(|(i, &off)| ChannelPath {
            channel_id: i + 1,
            static_length_offset: off,
            stage,
            splice_adjustment: 0.0,
        })
        .collect();

    println!("{:>8} {:>12} {:>12} {:>12} {:>12}", "channel", "offset (mm)", "stage (mm)", "resid (um)", "visibility");
    for p in &paths {
        let sol = optimize_stage(p, &pulse)?;
        println!(
            "{:>8} {:>12.3} {:>12.3} {:>12.1} {:>12.5}{}",
            p.channel_id,
            p.static_length_offset * 1e3,
            sol.position * 1e3,
            sol.residual * 1e6,
            sol.visibility,
            if sol.in_range { "" } else { "  <- stage cannot reach" }
        );
    }

    // channels below the floor get a splice prescription that recenters
    // their remaining error in the stage travel
    let plan = splice_plan(&paths, &pulse, 0.999)?;
    println!("\nsplice plan (floor {}):", plan.visibility_floor);
    for e in &plan.entries {
        println!(
            "  channel {}: splice {:+.2} mm, then stage {:.2} mm leaves {:+.0} um (V = {:.5})",
            e.channel_id,
            e.splice * 1e3,
            e.solution.position * 1e3,
            e.solution.residual * 1e6,
            e.solution.visibility
        );
    }

    // what the alignment camera would see at the worst residual
    let fringes = fringe_pattern(&pulse, 100e-6, 0.01)?;
    println!(
        "\nfringe contrast at a 100 um residual: {:.5} (the envelope you \
         tune against)",
        fringe_contrast(&fringes)?
    );
    Ok(())
}
