//! Writes a contact sheet of test images (top row) and their
//! reconstructions (bottom row).
//!
//! ```text
//! cargo run --release --example reconstruct_images -- data run/model.ckpt sheet.png 8 eval
//! ```

use std::path::PathBuf;

use image::{Rgb, RgbImage};
use railscan::checkpoint::load_checkpoint;
use railscan::dataset::{load_rows, Manifest, Split};
use railscan::model::{reconstruct, IMAGE_SIZE};
use railscan::{Error, Mode, Tensor};

fn paste(sheet: &mut RgbImage, t: &Tensor, i: usize, x0: u32, y0: u32) {
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let d = &t.data()[i * 3 * plane..(i + 1) * 3 * plane];
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let px = |c: usize| ((d[c * plane + y * IMAGE_SIZE + x] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            sheet.put_pixel(x0 + x as u32, y0 + y as u32, Rgb([px(0), px(1), px(2)]));
        }
    }
}

fn main() -> railscan::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let ckpt = load_checkpoint(&PathBuf::from(args.next().unwrap_or_else(|| "run/model.ckpt".into())))?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| "sheet.png".into()));
    let count: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    let mode = match args.next().as_deref() {
        Some("instance") => Mode::Instance,
        _ => Mode::Eval,
    };

    let manifest = Manifest::read(&dir)?;
    let test = manifest.split(Split::Test);
    // half normal, half abnormal
    let mut rows: Vec<_> = test.iter().filter(|r| !r.label.is_abnormal()).take(count / 2).copied().collect();
    rows.extend(test.iter().filter(|r| r.label.is_abnormal()).take(count - rows.len()).copied());
    let x = load_rows(&dir, &rows)?;
    let nets = &ckpt.networks;
    let (x_hat, _, _) = reconstruct(&nets.encoder, &nets.decoder, &x, mode)?;

    let s = IMAGE_SIZE as u32;
    let mut sheet = RgbImage::new(s * rows.len() as u32, 2 * s);
    for i in 0..rows.len() {
        paste(&mut sheet, x.tensor(), i, i as u32 * s, 0);
        paste(&mut sheet, x_hat.tensor(), i, i as u32 * s, s);
    }
    sheet.save(&out).map_err(|source| Error::Image { path: out.clone(), source })?;
    println!("{}", out.display());
    Ok(())
}
