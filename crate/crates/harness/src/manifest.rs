use std::time::Instant;

use serde::Serialize;

/// Provenance of one command run. Timings vary between runs; everything else is a
/// function of the configuration and the command line.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub config_hash: String,
    pub master_seed: u64,
    pub seed_derivation: &'static str,
    pub rng: &'static str,
    pub replica_seeds: Vec<String>,
    pub workers: usize,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub records: usize,
    pub seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, master_seed: u64, workers: usize) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            config_hash,
            master_seed,
            seed_derivation: "replica i: splitmix64(splitmix64(seed) ^ i * 0x9e3779b97f4a7c15); \
                              streams: environment 0, tree 1, oracle 2",
            rng: "ChaCha8 (rand_chacha), seed_from_u64",
            replica_seeds: Vec::new(),
            workers,
            stages: Vec::new(),
        }
    }

    pub fn stage(&mut self, name: &str, records: usize, started: Instant) {
        self.stages.push(StageRecord {
            name: name.into(),
            records,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
}
