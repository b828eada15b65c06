use nbcensor::io::{FitSummary, ModelFile, Provenance};
use nbcensor::{ModelSpec, ParameterPoint};

fn golden_model() -> ModelFile {
    let spec = ModelSpec::new(3, vec![2, 3]).unwrap();
    let parameters = ParameterPoint::new(
        &spec,
        vec![0.3, 0.3, 0.4],
        vec![
            vec![vec![0.8, 0.2], vec![0.5, 0.5], vec![0.2, 0.8]],
            vec![
                vec![0.6, 0.3, 0.1],
                vec![0.2, 0.6, 0.2],
                vec![0.1, 0.3, 0.6],
            ],
        ],
    )
    .unwrap();
    ModelFile {
        spec,
        parameters,
        provenance: Provenance {
            tool_version: "0.1.0".into(),
            data_hash: Some(
                "0000000000000000000000000000000000000000000000000000000000000000".into(),
            ),
            fit: Some(FitSummary {
                log_cccl: -1234.5,
                iterations: 42,
                final_gradient_norm: 1e-9,
                converged: true,
                boundary: false,
            }),
        },
    }
}

const GOLDEN: &str = include_str!("data/golden_model.toml");

#[test]
fn writer_matches_golden_file() {
    assert_eq!(golden_model().to_text(), GOLDEN);
}

#[test]
fn golden_file_loads() {
    let m = ModelFile::from_text(GOLDEN).unwrap();
    assert_eq!(m, golden_model());
}

#[test]
fn file_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.toml");
    nbcensor::io::save_model(&golden_model(), &path).unwrap();
    assert_eq!(nbcensor::io::load_model(&path).unwrap(), golden_model());
}
