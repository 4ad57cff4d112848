//! Named display-pattern generators and the default train/test split.
//!
//! Pattern specs:
//!
//! * `onehot:k`: superpixel `k` white, all others black,
//! * `uniform:v`: every superpixel at gray level `v`,
//! * `gradient-x`, `gradient-y`, `gradient-z`: one component of the unit
//!   direction from the object center to each superpixel, rescaled to `[0, 1]`,
//! * `complement:<spec>`: `1 - p` for any other spec,
//! * `random:<seed>`: independent uniform RGB values,
//! * anything else is read as a path to a JSON array of RGB triples.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::render::DisplayPattern;
use crate::scene::{DisplayModel, Vec3, OBJECT_DISTANCE};

use super::{read_json, write_json};

pub fn parse_pattern(spec: &str, display: &DisplayModel) -> Result<DisplayPattern> {
    let n = display.len();
    let bad = |why: &str| Error::InvalidInput(format!("pattern {spec:?}: {why}"));
    if let Some(rest) = spec.strip_prefix("complement:") {
        let base = parse_pattern(rest, display)?;
        return DisplayPattern::new(base.values.iter().map(|v| v.map(|x| 1.0 - x)).collect());
    }
    if let Some(k) = spec.strip_prefix("onehot:") {
        let k: usize = k.parse().map_err(|_| bad("index is not an integer"))?;
        if k >= n {
            return Err(bad(&format!("index out of range for {n} superpixels")));
        }
        return Ok(DisplayPattern::one_hot(n, k));
    }
    if let Some(v) = spec.strip_prefix("uniform:") {
        let v: f64 = v.parse().map_err(|_| bad("level is not a number"))?;
        return DisplayPattern::new(vec![[v; 3]; n]);
    }
    if let Some(seed) = spec.strip_prefix("random:") {
        let seed: u64 = seed.parse().map_err(|_| bad("seed is not an integer"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        return DisplayPattern::new((0..n).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect());
    }
    let axis = match spec {
        "gradient-x" => Some(0),
        "gradient-y" => Some(1),
        "gradient-z" => Some(2),
        _ => None,
    };
    if let Some(axis) = axis {
        let center = Vec3::new(0.0, 0.0, OBJECT_DISTANCE);
        let comp: Vec<f64> = display
            .positions
            .iter()
            .map(|p| (p - center).normalize()[axis])
            .collect();
        let lo = comp.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = comp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let values = comp
            .iter()
            .map(|&c| [if span > 0.0 { (c - lo) / span } else { 1.0 }; 3])
            .collect();
        return DisplayPattern::new(values);
    }
    let pattern: DisplayPattern = read_json(Path::new(spec))?;
    if pattern.len() != n {
        return Err(Error::Dimension(format!(
            "pattern {spec} has {} entries, display has {n}",
            pattern.len()
        )));
    }
    DisplayPattern::new(pattern.values)
}

pub fn save_pattern(path: &Path, pattern: &DisplayPattern) -> Result<()> {
    write_json(path, pattern)
}

pub fn load_pattern(path: &Path) -> Result<DisplayPattern> {
    let p: DisplayPattern = read_json(path)?;
    DisplayPattern::new(p.values)
}

/// One-hot patterns for every superpixel.
pub fn olat_patterns(n: usize) -> Vec<DisplayPattern> {
    (0..n).map(|k| DisplayPattern::one_hot(n, k)).collect()
}

/// Every sixth index is held out, giving a 5:1 train/test ratio.
pub fn default_split(m: usize) -> (Vec<usize>, Vec<usize>) {
    (0..m).partition(|k| k % 6 != 5)
}
