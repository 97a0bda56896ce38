use mirrortrain::{Error, ExperimentConfig};
use mirrortrain_core::humansim::ImperfectionParams;

fn config_field(text: &str) -> String {
    match ExperimentConfig::from_json(text) {
        Err(Error::Config { field, .. }) => field,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn empty_document_gives_the_defaults() {
    assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
}

#[test]
fn cohort_of_one_is_rejected() {
    assert_eq!(config_field(r#"{"cohort_size": 1}"#), "cohort_size");
}

#[test]
fn nested_errors_name_the_offending_field() {
    assert_eq!(config_field(r#"{"imperfections": {"drift_step_sigma": -1.0}}"#), "imperfections.drift_step_sigma");
    assert_eq!(config_field(r#"{"decoder": {"channel_subset": 0}}"#), "decoder.channel_subset");
    assert_eq!(config_field(r#"{"catalog": []}"#), "catalog");
}

#[test]
fn unknown_keys_are_rejected() {
    for text in [r#"{"cohort": 7}"#, r#"{"imperfections": {"coupling": 0.2}}"#, r#"{"decoder": {"lambda": 1}}"#] {
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert_eq!(err.kind(), "config_parse", "{text}");
        assert!(err.to_string().contains("unknown field"), "{err}");
    }
}

#[test]
fn echo_round_trips_except_for_the_output_directory() {
    let mut config = ExperimentConfig::default();
    config.master_seed = 99;
    config.output_dir = "elsewhere".into();
    let echo = config.echo();
    assert!(echo.get("output_dir").is_none());
    let back: ExperimentConfig = serde_json::from_value(echo).unwrap();
    assert_eq!(back.master_seed, 99);
    assert_eq!(back.output_dir, ExperimentConfig::default().output_dir);
    assert_eq!(back.imperfections, config.imperfections);
}

#[test]
fn shipped_calibration_matches_the_built_in_defaults() {
    let text = include_str!("../data/paper_tuned_imperfections.json");
    let params: ImperfectionParams = serde_json::from_str(text).unwrap();
    assert_eq!(params, ImperfectionParams::paper_tuned());
}
