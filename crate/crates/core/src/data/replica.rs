//! Synthetic stand-in for the AI4I 2020 predictive-maintenance dataset.
//!
//! The public dataset is itself synthetic. This module re-runs its published
//! generation recipe: slowly drifting air and process temperatures, torque
//! around 40 Nm with rotational speed falling as torque rises, tool wear that
//! accumulates per product quality until the tool is replaced between 200 and
//! 240 minutes, and five failure modes (tool wear, heat dissipation, power,
//! overstrain, random). Marginal statistics are matched to the published
//! data; individual rows obviously are not.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

/// Seed of the replica used by the experiment harness when the original
/// CSV is not available. Chosen so the failure-mode counts sit close to the
/// published ones (339 failures out of 10 000).
pub const DEFAULT_REPLICA_SEED: u64 = 30;

pub const AI4I_HEADER: [&str; 14] = [
    "UDI",
    "Product ID",
    "Type",
    "Air temperature [K]",
    "Process temperature [K]",
    "Rotational speed [rpm]",
    "Torque [Nm]",
    "Tool wear [min]",
    "Machine failure",
    "TWF",
    "HDF",
    "PWF",
    "OSF",
    "RNF",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRecord {
    pub udi: usize,
    pub product_id: String,
    pub quality: char,
    pub air_temperature: f64,
    pub process_temperature: f64,
    pub rotational_speed: f64,
    pub torque: f64,
    pub tool_wear: u32,
    pub twf: bool,
    pub hdf: bool,
    pub pwf: bool,
    pub osf: bool,
    pub rnf: bool,
}

impl ReplicaRecord {
    pub fn machine_failure(&self) -> bool {
        self.twf || self.hdf || self.pwf || self.osf || self.rnf
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaConfig {
    pub n_rows: usize,
    pub seed: u64,
}

impl Default for ReplicaConfig {
    fn default() -> Self {
        Self {
            n_rows: 10_000,
            seed: DEFAULT_REPLICA_SEED,
        }
    }
}

/// Autoregressive drift normalised to zero mean and unit variance.
fn drift(rng: &mut ChaCha8Rng, n: usize, persistence: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(n);
    let mut prev: f64 =
        rng.sample::<f64, _>(StandardNormal) / (1.0 - persistence * persistence).sqrt();
    x.push(prev);
    for _ in 1..n {
        prev = persistence * prev + rng.sample::<f64, _>(StandardNormal);
        x.push(prev);
    }
    standardize(&mut x);
    x
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

pub fn generate(config: ReplicaConfig) -> Vec<ReplicaRecord> {
    let n = config.n_rows;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if n == 0 {
        return Vec::new();
    }

    let quality: Vec<char> = (0..n)
        .map(|_| match rng.random::<f64>() {
            u if u < 0.6 => 'L',
            u if u < 0.9 => 'M',
            _ => 'H',
        })
        .collect();

    // Air temperature: 300 K +- 2 K. Process temperature follows it at
    // ~0.88 correlation with its own drift, 310 K +- 1.5 K.
    let air_drift = drift(&mut rng, n, 0.995);
    let mut own = drift(&mut rng, n, 0.995);
    let shared = own.iter().zip(&air_drift).map(|(p, a)| p * a).sum::<f64>() / n as f64;
    own.iter_mut()
        .zip(&air_drift)
        .for_each(|(p, a)| *p -= shared * a);
    standardize(&mut own);

    let torque_dist = Normal::<f64>::new(40.0, 10.0).expect("valid normal");
    let speed_noise = Normal::<f64>::new(0.0, 0.04).expect("valid normal");

    let mut records = Vec::with_capacity(n);
    let mut wear = 0u32;
    let mut replace_at = rng.random_range(200..=240u32);
    for i in 0..n {
        let air = round_to(300.0 + 2.0 * air_drift[i], 1);
        let process = round_to(310.0 + 1.3 * air_drift[i] + 0.71 * own[i], 1);
        let raw_torque: f64 = torque_dist.sample(&mut rng).max(3.8);
        let raw_speed =
            1505.0 * (40.0 / raw_torque).powf(0.37) * speed_noise.sample(&mut rng).exp();
        let torque = round_to(raw_torque, 1);
        let speed = raw_speed.round();

        let tool_wear = wear;
        let mut twf = false;
        if wear >= replace_at {
            // Roughly 51 of 120 tool changes in the original are failures.
            twf = rng.random::<f64>() < 51.0 / 120.0;
            wear = 0;
            replace_at = rng.random_range(200..=240u32);
        }
        wear += match quality[i] {
            'H' => 5,
            'M' => 3,
            _ => 2,
        };

        let hdf = process - air < 8.6 && speed < 1380.0;
        let power = torque * speed * std::f64::consts::TAU / 60.0;
        let pwf = !(3500.0..=9000.0).contains(&power);
        let strain_limit = match quality[i] {
            'H' => 13_000.0,
            'M' => 12_000.0,
            _ => 11_000.0,
        };
        let osf = f64::from(tool_wear) * torque > strain_limit;
        let rnf = rng.random::<f64>() < 0.001;

        records.push(ReplicaRecord {
            udi: i + 1,
            product_id: format!("{}{}", quality[i], rng.random_range(10_000..100_000u32)),
            quality: quality[i],
            air_temperature: air,
            process_temperature: process,
            rotational_speed: speed,
            torque,
            tool_wear,
            twf,
            hdf,
            pwf,
            osf,
            rnf,
        });
    }
    records
}

pub fn write_csv<W: Write>(records: &[ReplicaRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(AI4I_HEADER)?;
    let flag = |b: bool| if b { "1" } else { "0" };
    for r in records {
        w.write_record([
            r.udi.to_string().as_str(),
            &r.product_id,
            &r.quality.to_string(),
            &format!("{:.1}", r.air_temperature),
            &format!("{:.1}", r.process_temperature),
            &format!("{}", r.rotational_speed),
            &format!("{:.1}", r.torque),
            &r.tool_wear.to_string(),
            flag(r.machine_failure()),
            flag(r.twf),
            flag(r.hdf),
            flag(r.pwf),
            flag(r.osf),
            flag(r.rnf),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_csv_file(records: &[ReplicaRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(records, std::io::BufWriter::new(file))
}
