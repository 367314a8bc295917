//! Writes a sheet of synthetic sprites to the given PNG path.

use filmedgan::data::generate_synthetic;
use filmedgan::film::ImageTensor;

fn main() -> filmedgan::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "sprites.png".into());
    let d = generate_synthetic(16, 1, (128, 64))?;
    let (h, w) = d.resolution;
    let cols = 8;
    let mut sheet = ImageTensor::zeros(3, 2 * h, cols * w);
    for (k, s) in d.all().take(16).enumerate() {
        let (r, c) = (k / cols, k % cols);
        for ch in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    sheet.values[(ch * 2 * h + r * h + i) * cols * w + c * w + j] =
                        s.image.values[(ch * h + i) * w + j];
                }
            }
        }
        println!("{k}: {}", s.caption);
    }
    filmedgan::imageio::save_png(&sheet, std::path::Path::new(&out))
}
