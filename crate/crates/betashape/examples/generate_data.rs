//! Write a synthetic dataset to the CSV pair the `betashape test` command
//! reads (curves.csv / response.csv in the current directory).

use std::path::Path;

use betashape::data::write_dataset;
use betashape::harness::{generate_dataset, CoefficientSpec, SimConfig};

fn main() {
    let config = SimConfig {
        n: 100,
        m_i: Some(20),
        coefficient: CoefficientSpec::Linear { delta: 1.0 },
        ..SimConfig::default()
    };
    let data = generate_dataset(&config, 2024).expect("dataset");
    write_dataset(&data, Path::new("curves.csv"), Path::new("response.csv")).expect("write");
    println!(
        "wrote curves.csv ({} rows) and response.csv ({} rows)",
        data.total_obs(),
        data.num_subjects()
    );
}
