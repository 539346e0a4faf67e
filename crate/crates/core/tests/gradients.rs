use evgest_core::model::{gradient_check, Architecture, GradCheckConfig, ModelConfig};

#[test]
fn composed_tiny_model_matches_finite_differences() {
    let config = ModelConfig::tiny();
    assert!(Architecture::new(&config).unwrap().param_count() <= 5_000);
    let report = gradient_check(&config, &GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{} mismatches: {:#?}", report.mismatches.len(), report.mismatches);
    assert_eq!(report.checked, 20 * report.params_per_pair);
    assert_eq!(report.kink_limited, 0);
    println!("checked {} refined {} max abs error {:e}", report.checked, report.refined, report.max_abs_error);
}

#[test]
fn check_detects_wrong_gradients() {
    // an impossible tolerance must flag mismatches, proving the comparison is live
    let cfg = GradCheckConfig { pairs: 1, rel_tol: 0.0, abs_tol: 0.0, ..GradCheckConfig::default() };
    let report = gradient_check(&ModelConfig::tiny(), &cfg).unwrap();
    assert!(!report.mismatches.is_empty());
}
