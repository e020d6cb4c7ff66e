//! Writes a tiny IDX image/label pair and loads it back as a dataset.
//!
//! Pass two paths (images, labels) to load real MNIST-format files instead.

use blind_unlearn::data::{idx_to_dataset, load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxImages};

fn main() -> blind_unlearn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let data = if let [images, labels] = args.as_slice() {
        load_idx(images, labels)?
    } else {
        let images = IdxImages {
            count: 3,
            rows: 2,
            cols: 2,
            pixels: vec![0, 255, 128, 64, 10, 20, 30, 40, 255, 255, 0, 0],
        };
        let image_bytes = write_idx_images(&images);
        let label_bytes = write_idx_labels(&[1, 0, 1]);
        idx_to_dataset(&parse_idx_images(&image_bytes)?, &parse_idx_labels(&label_bytes)?)?
    };
    println!("{} samples, {} features, {} classes", data.len(), data.features(), data.classes());
    println!("first row: {:?}", data.inputs().row(0));
    Ok(())
}
