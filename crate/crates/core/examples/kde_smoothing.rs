//! Quartic kernel smoothing of a count raster.

use geolambda::analytics::{kde, quartic_offsets};
use geolambda::{GridSpec, RasterGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GridSpec::from_corner(0.0, 0.0, 7, 7, 1.0)?;
    let mut counts = RasterGrid::zeros(spec);
    counts.set(3, 3, 1.0);
    counts.set(0, 0, 10.0);

    println!("radius-2 kernel weights:");
    for (dr, dc, w) in quartic_offsets(2) {
        println!("  ({dr:+}, {dc:+}) {w:.6}");
    }
    let smooth = kde(&counts, 2)?;
    for r in 0..spec.nrows {
        let row: Vec<String> = (0..spec.ncols).map(|c| format!("{:6.3}", smooth.get(r, c))).collect();
        println!("{}", row.join(" "));
    }
    println!("mass in {} out {}", counts.sum(), smooth.sum());
    Ok(())
}
