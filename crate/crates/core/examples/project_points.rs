//! Projects a few radar points into the image and back.

use hybridgen::geometry::{Calibration, Extrinsic, Intrinsic, PixelDepth};

fn main() -> hybridgen::Result<()> {
    // camera 0.5 m above the radar, looking along radar +x
    let extrinsic = Extrinsic::from_rows([
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 0.5],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])?;
    let calib = Calibration::new(Intrinsic::pinhole(1000.0, 1000.0, 640.0, 360.0)?, extrinsic);

    for p in [[10.0, 0.0, 0.0], [20.0, 3.0, -0.5], [35.0, -6.0, 1.0]] {
        let q = calib.project(p)?;
        let back = calib.unproject(q)?;
        println!(
            "radar ({:6.2}, {:6.2}, {:5.2}) -> pixel ({:7.2}, {:6.2}) depth {:5.2} -> radar ({:6.2}, {:6.2}, {:5.2})",
            p[0], p[1], p[2], q.u, q.v, q.d, back[0], back[1], back[2]
        );
    }

    match calib.project([-1.0, 0.0, 0.0]) {
        Err(e) => println!("point behind the sensor: {e}"),
        Ok(q) => println!("unexpected projection {q:?}"),
    }

    let q = PixelDepth {
        u: 640.0,
        v: 360.0,
        d: 15.0,
    };
    println!("principal ray at 15 m: {:?}", calib.unproject(q)?);
    println!("\ncalibration file:\n{}", calib.to_text());
    Ok(())
}
