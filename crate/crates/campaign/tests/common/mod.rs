#![allow(dead_code)]

use std::path::{Path, PathBuf};

use metaod::config::CampaignConfig;
use metaod_core::extraction::ObjectInstance;
use metaod_core::pool::save_instance;
use metaod_core::{BBox, Detection, ImageBuffer};
use metaod_gateway::{Behavior, DetectorEndpoint, EndpointKind, MockScenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LABELS: [&str; 3] = ["car", "person", "dog"];

pub struct Background {
    pub path: PathBuf,
    pub image: ImageBuffer,
    pub truth: Vec<Detection>,
}

/// A temporary directory holding backgrounds, a pool, a mock scenario and a
/// config pointing at all three.
pub struct World {
    pub dir: tempfile::TempDir,
    pub backgrounds: Vec<Background>,
    pub cfg: CampaignConfig,
}

impl World {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn out(&self) -> PathBuf {
        self.cfg.out_dir.clone()
    }

    pub fn total_objects(&self) -> usize {
        self.backgrounds.iter().map(|b| b.truth.len()).sum()
    }
}

/// Smooth random texture so backgrounds are distinct and HOG has content.
pub fn texture(w: u32, h: u32, rng: &mut impl Rng) -> ImageBuffer {
    let (fx, fy, fz) = (rng.random_range(0.02..0.2), rng.random_range(0.02..0.2), rng.random_range(0.01..0.1));
    let base: [f64; 3] = [rng.random_range(40.0..200.0), rng.random_range(40.0..200.0), rng.random_range(40.0..200.0)];
    ImageBuffer::from_fn(w, h, |x, y| {
        let v = ((x as f64 * fx).sin() + (y as f64 * fy).cos() + ((x + y) as f64 * fz).sin()) * 18.0;
        let px = |c: f64| (c + v).clamp(0.0, 255.0) as u8;
        [px(base[0]), px(base[1]), px(base[2]), 255]
    })
}

/// Up to 12 boxes, each inside its own cell of a 4 x 3 grid over 320 x 240.
pub fn boxes(m: usize, labels: &[&str], rng: &mut impl Rng) -> Vec<Detection> {
    assert!(m <= 12);
    let mut cells: Vec<usize> = (0..12).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    cells[..m]
        .iter()
        .map(|&c| {
            let (cx, cy) = ((c % 4) as f64 * 80.0, (c / 4) as f64 * 80.0);
            let (w, h) = (rng.random_range(16..32) as f64, rng.random_range(16..32) as f64);
            let x = cx + rng.random_range(0.0..(80.0 - w));
            let y = cy + rng.random_range(0.0..(80.0 - h));
            let label = labels[rng.random_range(0..labels.len())];
            Detection::new(label, rng.random_range(0.5..1.0), BBox::new(x, y, w, h).unwrap())
        })
        .collect()
}

/// An elliptical cut-out with its own color.
pub fn blob(label: &str, w: u32, h: u32, seed: u64) -> ObjectInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()];
    let img = ImageBuffer::from_fn(w, h, |x, y| {
        let dx = (x as f64 + 0.5) / w as f64 - 0.5;
        let dy = (y as f64 + 0.5) / h as f64 - 0.5;
        let inside = dx * dx + dy * dy <= 0.25;
        [c[0].wrapping_add(x as u8), c[1], c[2].wrapping_add(y as u8), if inside { 255 } else { 0 }]
    });
    ObjectInstance::from_crop(label, img, format!("src-{seed}"), BBox::new(0., 0., w as f64, h as f64).unwrap())
        .unwrap()
}

pub fn write_pool(dir: &Path, labels: &[&str], per_label: usize) {
    for (li, label) in labels.iter().enumerate() {
        for j in 0..per_label {
            let seed = (li * 1000 + j) as u64;
            save_instance(dir, &blob(label, 14 + (j as u32 * 3) % 17, 12 + (j as u32 * 5) % 15, seed)).unwrap();
        }
    }
}

pub fn mock_endpoint(scenario: &Path) -> DetectorEndpoint {
    DetectorEndpoint {
        qps_limit: 1e6,
        max_in_flight: 4,
        timeout: 10_000,
        ..DetectorEndpoint::new("mock-detector", EndpointKind::Mock, scenario.display().to_string())
    }
}

/// `counts[i]` baseline objects on background `i`.
pub fn world(counts: &[usize], labels: &[&str], behavior: Behavior, seed: u64) -> World {
    let dir = tempfile::tempdir().unwrap();
    let bg_dir = dir.path().join("backgrounds");
    std::fs::create_dir_all(&bg_dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenario = MockScenario::new(behavior);
    let mut backgrounds = Vec::new();
    for (i, &m) in counts.iter().enumerate() {
        let image = texture(320, 240, &mut rng);
        let truth = boxes(m, labels, &mut rng);
        let path = bg_dir.join(format!("bg{i:03}.png"));
        image.save_png(&path).unwrap();
        scenario = scenario.with_background(&image, truth.clone());
        backgrounds.push(Background { path, image, truth });
    }
    let scenario_path = dir.path().join("scenario.json");
    std::fs::write(&scenario_path, serde_json::to_string(&scenario).unwrap()).unwrap();
    let pool_dir = dir.path().join("pool");
    write_pool(&pool_dir, labels, 4);

    let mut cfg = CampaignConfig::new(
        mock_endpoint(&scenario_path),
        format!("{}/*.png", bg_dir.display()),
        pool_dir,
        dir.path().join("out"),
    );
    cfg.seed = seed;
    cfg.keep_fraction = 1.0;
    World { dir, backgrounds, cfg }
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
