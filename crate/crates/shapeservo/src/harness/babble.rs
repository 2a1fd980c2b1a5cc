//! Motor babbling: the excitation phase that seeds the estimator.
//!
//! The plant performs a random walk of bounded twists around its initial
//! configuration. Every step records the network input before the motion,
//! the twist, and the observed feature velocity. The log doubles as the
//! k-means sample set for the basis centers and persists as CSV so a
//! babbling session can be reused across runs.

use rand::Rng;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::{estimator_input, BabbleSample};
use crate::keypoints::{extract_features_noisy, KeypointSet};
use crate::plant::{Plant, Twist};

/// Runs `count` random-walk steps on the plant, drawing each twist channel
/// uniformly from `[-magnitude, magnitude]`. Feature reads carry the
/// scenario's sensing noise; velocities are first differences over `dt`.
pub fn babble<R: Rng>(
    plant: &mut Plant,
    keypoints: &KeypointSet,
    count: usize,
    magnitude: f64,
    dt: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<Vec<BabbleSample>> {
    if count == 0 {
        return Err(Error::Config("babble needs at least one sample".into()));
    }
    if !(magnitude > 0.0) {
        return Err(Error::Config(format!("babble magnitude must be > 0, got {magnitude}")));
    }
    let mut samples = Vec::with_capacity(count);
    let mut p = extract_features_noisy(plant, keypoints, noise_std, rng);
    for _ in 0..count {
        let c = plant.configuration();
        let u = Twist::from_fn(|_, _| rng.gen_range(-magnitude..=magnitude));
        plant.step(&u, dt)?;
        let p_next = extract_features_noisy(plant, keypoints, noise_std, rng);
        let pdot = (&p_next - &p) / dt;
        samples.push(BabbleSample { x: estimator_input(&c, &p), u, pdot });
        p = p_next;
    }
    Ok(samples)
}

/// Writes a babbling log as CSV with header `x_*, u_1..u_12, pdot_*`.
pub fn write_babble_csv(path: impl AsRef<Path>, samples: &[BabbleSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Config("refusing to write an empty babbling log".into()));
    }
    let x_dim = samples[0].x.len();
    let p_dim = samples[0].pdot.len();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = Vec::new();
    for i in 1..=x_dim {
        header.push(format!("x_{i}"));
    }
    for i in 1..=12 {
        header.push(format!("u_{i}"));
    }
    for i in 1..=p_dim {
        header.push(format!("pdot_{i}"));
    }
    writeln!(file, "{}", header.join(","))?;
    for s in samples {
        let mut fields = Vec::with_capacity(x_dim + 12 + p_dim);
        fields.extend(s.x.iter().map(|v| format!("{v}")));
        fields.extend(s.u.iter().map(|v| format!("{v}")));
        fields.extend(s.pdot.iter().map(|v| format!("{v}")));
        writeln!(file, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Parses a babbling log written by `write_babble_csv`.
pub fn read_babble_csv(path: impl AsRef<Path>) -> Result<Vec<BabbleSample>> {
    let text = std::fs::read_to_string(path)?;
    parse_babble_csv(&text)
}

/// Pure parser over the CSV text; the fuzzing entry point.
pub fn parse_babble_csv(text: &str) -> Result<Vec<BabbleSample>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("babble log is empty".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    let x_dim = columns.iter().take_while(|c| c.starts_with("x_")).count();
    let u_dim = columns[x_dim..].iter().take_while(|c| c.starts_with("u_")).count();
    let p_dim = columns[x_dim + u_dim..]
        .iter()
        .take_while(|c| c.starts_with("pdot_"))
        .count();
    if x_dim == 0 || u_dim != 12 || p_dim == 0 || x_dim + u_dim + p_dim != columns.len() {
        return Err(Error::Config(format!(
            "babble log header malformed: {x_dim} x, {u_dim} u, {p_dim} pdot of {} columns",
            columns.len()
        )));
    }
    if x_dim != 12 + p_dim {
        return Err(Error::Config(format!(
            "babble log header inconsistent: x dimension {x_dim} != 12 + {p_dim}"
        )));
    }
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::Config(format!(
                "babble log row {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                columns.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("babble log row {}: bad number `{s}`", lineno + 2)))
        };
        let mut x = nalgebra::DVector::zeros(x_dim);
        for i in 0..x_dim {
            x[i] = parse(fields[i])?;
        }
        let mut u = Twist::zeros();
        for i in 0..12 {
            u[i] = parse(fields[x_dim + i])?;
        }
        let mut pdot = nalgebra::DVector::zeros(p_dim);
        for i in 0..p_dim {
            pdot[i] = parse(fields[x_dim + 12 + i])?;
        }
        samples.push(BabbleSample { x, u, pdot });
    }
    if samples.is_empty() {
        return Err(Error::Config("babble log has a header but no rows".into()));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::Scenario;
    use crate::harness::prepare;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn babble_round_trips_through_csv() {
        let scenario = Scenario::preset("task_a").unwrap().unwrap();
        let prepared = prepare(&scenario).unwrap();
        let mut plant = prepared.plant.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples = babble(&mut plant, &prepared.keypoints, 8, 0.03, 0.05, 1e-4, &mut rng).unwrap();
        assert_eq!(samples.len(), 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("babble.csv");
        write_babble_csv(&path, &samples).unwrap();
        let back = read_babble_csv(&path).unwrap();
        assert_eq!(samples, back, "shortest round-trip floats must survive CSV");
    }

    #[test]
    fn babble_walk_is_deterministic_per_seed() {
        let scenario = Scenario::preset("task_a").unwrap().unwrap();
        let prepared = prepare(&scenario).unwrap();
        let run = |seed| {
            let mut plant = prepared.plant.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            babble(&mut plant, &prepared.keypoints, 5, 0.03, 0.05, 1e-4, &mut rng).unwrap()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn malformed_logs_are_rejected() {
        assert!(parse_babble_csv("").is_err());
        assert!(parse_babble_csv("x_1,u_1\n1,2\n").is_err());
        let mut good = String::from("x_1,x_2,x_3,x_4,x_5,x_6,x_7,x_8,x_9,x_10,x_11,x_12,x_13,x_14,x_15,");
        good.push_str("u_1,u_2,u_3,u_4,u_5,u_6,u_7,u_8,u_9,u_10,u_11,u_12,pdot_1,pdot_2,pdot_3\n");
        assert!(parse_babble_csv(&good).is_err(), "no rows");
        let mut with_row = good.clone();
        with_row.push_str(&"0,".repeat(29));
        with_row.push_str("0\n");
        assert!(parse_babble_csv(&with_row).is_ok());
        let mut bad_number = good;
        bad_number.push_str(&"0,".repeat(29));
        bad_number.push_str("zebra\n");
        assert!(parse_babble_csv(&bad_number).is_err());
    }
}
