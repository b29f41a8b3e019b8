mod common;

use common::op_gradient_errors;
use flavr_core::gradcheck::{check_network, GradCheckOptions};
use flavr_core::{FlavrConfig, FusionMode};

const TOL: f64 = 1e-5;

#[test]
fn every_op_gradient_matches_central_differences() {
    let errors = op_gradient_errors(21, 1e-5);
    assert!(errors.len() > 50);
    for (name, e) in errors {
        assert!(e <= TOL, "{name}: max rel err {e:e}");
    }
}

#[test]
fn network_gradients_across_switches() {
    let opts = GradCheckOptions {
        per_tensor: Some(6),
        ..GradCheckOptions::default()
    };
    let mut configs = Vec::new();
    for fusion in [FusionMode::None, FusionMode::Add, FusionMode::Concat] {
        configs.push(FlavrConfig { fusion, ..FlavrConfig::tiny() });
    }
    configs.push(FlavrConfig { gating: false, ..FlavrConfig::tiny() });
    configs.push(FlavrConfig {
        temporal_stride: [1, 1, 2, 1, 1],
        ..FlavrConfig::tiny()
    });
    configs.push(FlavrConfig::tiny().with_k(4).with_context(1));
    for cfg in configs {
        let report = check_network(&cfg, &opts).unwrap();
        assert!(report.checked > 100, "{cfg:?}: only {} coordinates", report.checked);
        assert!(report.max_rel_err <= TOL, "{cfg:?}: {report:?}");
    }
}
