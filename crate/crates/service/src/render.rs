use emoc_core::Tensor;

/// Encodes `[1 | 3, h, w]` features in `[0, 1]` as an 8-bit PNG.
pub fn png(x: &Tensor<f64>) -> Vec<u8> {
    let [channels, h, w] = *x.shape() else {
        panic!("png expects [channels, height, width], got {:?}", x.shape());
    };
    let plane = h * w;
    let v = x.values();
    let mut pixels = Vec::with_capacity(channels * plane);
    for i in 0..plane {
        for c in 0..channels {
            pixels.push((v[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
    enc.set_color(if channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().expect("in-memory png header");
    writer.write_image_data(&pixels).expect("in-memory png data");
    writer.finish().expect("in-memory png");
    out
}
