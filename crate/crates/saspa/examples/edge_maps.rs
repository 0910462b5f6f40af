//! Canny edge maps: auto thresholds, extraction, persistence, resizing.

use std::fs;

use image::{DynamicImage, Rgb, RgbImage};
use saspa::edges::{
    auto_thresholds, extract_canny_edges, load_edge_png, resize_shortest_side, scaled_dimensions,
    Detector, DetectorParams,
};

fn main() -> saspa::Result<()> {
    // gradient background with a bright box: plenty of structure
    let source = RgbImage::from_fn(320, 240, |x, y| {
        let inside = (80..240).contains(&x) && (60..180).contains(&y);
        let base = (x / 4) as u8;
        if inside {
            Rgb([230, 210, 90])
        } else {
            Rgb([base, base, base.saturating_add(20)])
        }
    });
    let dynamic = DynamicImage::ImageRgb8(source);

    let (low, high) = auto_thresholds(&dynamic)?;
    println!("auto thresholds: low {low}, high {high}");

    let map = extract_canny_edges(&dynamic, "demo", low, high)?;
    let on = map.data.iter().filter(|&&v| v == 255).count();
    println!(
        "edge map {}x{}: {} edge pixels ({:.2}%), empty: {}",
        map.width,
        map.height,
        on,
        100.0 * on as f64 / map.data.len() as f64,
        map.is_empty_map()
    );

    let dir = std::path::Path::new("target/example-scratch/edge_maps");
    fs::create_dir_all(dir).expect("scratch dir");
    let path = map.save_png(dir)?;
    println!("saved {}", path.display());

    let loaded = load_edge_png(
        &path,
        "demo",
        Detector::Canny,
        DetectorParams { low, high, gaussian_sigma: 1.4 },
    )?;
    assert_eq!(loaded.data, map.data);
    println!("round-tripped through png losslessly");

    println!("shortest-side-512 resolutions:");
    for (w, h) in [(1024, 768), (768, 1024), (512, 512), (4000, 1000)] {
        let (sw, sh) = scaled_dimensions(w, h, 512);
        println!("  {w}x{h} -> {sw}x{sh}");
    }
    let resized = resize_shortest_side(&dynamic, 512)?;
    println!("demo image resized to {}x{}", resized.width(), resized.height());
    Ok(())
}
