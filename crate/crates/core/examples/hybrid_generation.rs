//! Densifies a synthetic frame with mask-guided hybrid sampling.

use hybridgen::rhgm::{generate_hybrid, Frame, GenParams, GenerationKind};
use hybridgen::synth::{demo_scene, simulate_scene};

fn main() -> hybridgen::Result<()> {
    let sim = simulate_scene(&demo_scene(3))?;
    let frame = Frame {
        raw: sim.raw,
        calib: sim.calib,
        masks: sim.masks,
    };
    let params = GenParams::default();
    let set = generate_hybrid(&frame, &params)?;

    println!(
        "r = {} px, σ = {:.1} px, {} Gaussian + {} uniform per mask",
        params.radius,
        params.sigma_u(),
        params.n_gauss,
        params.n_uniform
    );
    println!(
        "raw {}, foreground {}, gaussian {}, uniform {}",
        set.raw.len(),
        set.foreground.len(),
        set.count(GenerationKind::Gaussian),
        set.count(GenerationKind::Uniform)
    );
    for r in &set.report.instances {
        println!(
            "  instance {}: {} anchors, {} gaussian, {} uniform{}",
            r.instance,
            r.foreground,
            r.gaussian,
            r.uniform,
            if r.fallback {
                " (whole-mask fallback)"
            } else {
                ""
            }
        );
    }
    for g in set.generated.iter().take(3) {
        println!(
            "  {:?} at ({:.1}, {:.1}) px depth {:.2} m -> radar ({:.2}, {:.2}, {:.2}) from anchor {:?}",
            g.origin, g.u, g.v, g.d, g.x, g.y, g.z, g.source
        );
    }
    Ok(())
}
