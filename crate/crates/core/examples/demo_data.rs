//! Regenerates `data/demo_trial.csv` from the simulation model with readable
//! level names: `cargo run --example demo_data > data/demo_trial.csv`.

use subgroup_shrink::data::{write_trial, Covariate, CovariateSchema, TrialDataset};
use subgroup_shrink::simulation::{generate_replication, DgpConfig, ReplicationSeed};

fn main() -> subgroup_shrink::Result<()> {
    let cfg = DgpConfig::default();
    let seed = ReplicationSeed {
        base_seed: 7,
        e_index: 0,
        replication: 0,
    };
    let raw = generate_replication(&cfg, seed)?;
    let schema = CovariateSchema::new(vec![
        Covariate::new("sex", &["F", "M"]),
        Covariate::new("race", &["Asian", "White"]),
    ])?;
    let named = TrialDataset::new(schema, raw.records().to_vec())?;
    write_trial(&named, std::io::stdout().lock())
}
