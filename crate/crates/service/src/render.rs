//! Layout SVGs and PNG encoding of generated latents.

use lmd_core::diffusion::LatentImage;
use lmd_core::generator::render::to_rgb8;
use lmd_core::Layout;

const BOX_COLORS: [&str; 8] = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#46a0a0", "#f032e6", "#808000",
];

fn escape(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '&' => "&amp;".into(),
            '<' => "&lt;".into(),
            '>' => "&gt;".into(),
            '"' => "&quot;".into(),
            '\'' => "&#39;".into(),
            c => c.to_string(),
        })
        .collect()
}

/// One labeled rectangle per object on a canvas-sized view box; stroke
/// color follows object index.
pub fn render_layout_svg(layout: &Layout) -> String {
    let (w, h) = (layout.canvas.width, layout.canvas.height);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <title>{}</title>\n\
         <g class=\"background\"><polygon points=\"0,0 {w},0 {w},{h} 0,{h}\" fill=\"#f4f4f4\"/></g>\n",
        escape(&layout.background_prompt)
    );
    for (i, o) in layout.objects.iter().enumerate() {
        let color = BOX_COLORS[i % BOX_COLORS.len()];
        let b = o.bbox;
        out.push_str(&format!(
            "<g class=\"object\" data-index=\"{i}\">\
             <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"{color}\" stroke-width=\"2\"/>\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" fill=\"{color}\">{}</text></g>\n",
            b.x(),
            b.y(),
            b.width(),
            b.height(),
            b.x() + 4,
            b.y() + 16,
            escape(&o.description)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// RGB PNG of a latent, each latent pixel repeated `scale` times per axis.
pub fn encode_png(image: &LatentImage, scale: usize) -> Vec<u8> {
    let scale = scale.max(1);
    let shape = image.shape();
    let rgb = to_rgb8(image);
    let (w, h) = (shape.width * scale, shape.height * scale);
    let mut pixels = Vec::with_capacity(w * h * 3);
    for row in 0..h {
        for col in 0..w {
            let i = ((row / scale) * shape.width + col / scale) * 3;
            pixels.extend_from_slice(&rgb[i..i + 3]);
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("png header into memory");
        writer
            .write_image_data(&pixels)
            .expect("png data into memory");
    }
    out
}
