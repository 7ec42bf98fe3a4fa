//! The test-time input-size rule and the letterbox mapping it feeds.
//!
//! cargo run --example input_sizing

use numstr::inference::{prepare_image, target_input_width, INPUT_HEIGHT};
use numstr::{BoundingBox, GrayImage};

fn main() -> numstr::Result<()> {
    println!("{:>10}  {:>12}", "string w", "input w x h");
    for sw in [40, 75, 76, 150, 228, 381, 524, 750] {
        println!("{sw:>10}  {:>7} x {INPUT_HEIGHT}", target_input_width(sw));
    }

    let img = GrayImage::new(228, 40, 255);
    let (tensor, lb) = prepare_image::<f32>(&img, INPUT_HEIGHT, target_input_width(img.width()))?;
    println!(
        "\n228x40 image -> input {:?}, scale ({:.3}, {:.3}), padding ({}, {})",
        tensor.shape(),
        lb.scale_x,
        lb.scale_y,
        lb.pad_x,
        lb.pad_y
    );
    let b = BoundingBox::new(10.0, 5.0, 30.0, 35.0)?;
    let net = lb.to_network(&b)?;
    let back = lb.to_image(&net)?;
    println!("box {b:?}\n  in network frame {net:?}\n  mapped back {back:?}");
    Ok(())
}
