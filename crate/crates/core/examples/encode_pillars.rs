//! Encodes a hybrid point set with each strategy and pillarizes it.

use hybridgen::encoding::{encode, pillarize, EncodingSchema, GridConfig, Strategy};
use hybridgen::rhgm::{generate_hybrid, Frame, GenParams};
use hybridgen::synth::{demo_scene, simulate_scene};

fn main() -> hybridgen::Result<()> {
    let spec = demo_scene(4);
    let sim = simulate_scene(&spec)?;
    let frame = Frame {
        raw: sim.raw,
        calib: sim.calib,
        masks: sim.masks,
    };
    let points = generate_hybrid(&frame, &GenParams::default())?.tagged_points();
    let grid = GridConfig::vod();

    for strategy in [
        Strategy::Concat,
        Strategy::Differentiable,
        Strategy::Separate,
    ] {
        let schema =
            EncodingSchema::new(spec.feature_names.len(), spec.class_names.len(), strategy);
        let enc = encode(&points, schema)?;
        let pillars = pillarize(&enc, &grid)?;
        let occupied = pillars.counts().iter().filter(|&&c| c > 0).count();
        println!(
            "{strategy:>14}: {} values per point, {} points, {}×{} grid, {occupied} occupied pillars",
            schema.len(),
            enc.len(),
            pillars.nx(),
            pillars.ny()
        );
        println!("{:>16}first row {:?}", "", enc.row(0));
    }

    let tj = GridConfig::tj4d();
    println!("alternate range gives a {}×{} grid", tj.nx(), tj.ny());
    Ok(())
}
