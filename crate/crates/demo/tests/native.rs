use noisescreen::screening::Scenario;
use noisescreen_demo::{applicant_report, counterfactual_report, roc_report, MAX_N};

#[test]
fn noisier_scores_rank_worse() {
    let r = roc_report(1.13, 15.96, 0.5, 2.46, 50_000, 7).unwrap();
    let (a, b) = (&r.groups[0], &r.groups[1]);
    assert!(a.auc > b.auc + 0.02, "{} vs {}", a.auc, b.auc);
    assert!(a.log_odds_slope < b.log_odds_slope && b.log_odds_slope < 0.0);
    for g in &r.groups {
        let first = g.roc.first().unwrap();
        let last = g.roc.last().unwrap();
        assert_eq!(*first, [0.0, 0.0]);
        assert_eq!(*last, [1.0, 1.0]);
        assert!(g.roc.windows(2).all(|w| w[1][0] >= w[0][0] && w[1][1] >= w[0][1]));
    }
}

#[test]
fn same_noise_gives_same_curves() {
    let r = roc_report(1.0, 10.0, 1.0, 1.0, 5_000, 3).unwrap();
    assert_eq!(r.groups[0].auc, r.groups[1].auc);
    assert_eq!(r.groups[0].roc, r.groups[1].roc);
}

#[test]
fn equal_precision_makes_equalize_a_no_op() {
    let rows = counterfactual_report(0.5, 0.4, 20_000, 5).unwrap();
    assert_eq!(rows.len(), 6);
    let find = |s: Scenario| rows.iter().find(|r| r.scenario == s && r.group == "minority").unwrap();
    let (base, eq) = (find(Scenario::Baseline), find(Scenario::EqualizeScorePrecision));
    assert_eq!(base.approval_rate, eq.approval_rate);
    assert_eq!(base.type1, eq.type1);

    let rows = counterfactual_report(2.46, 0.4, 20_000, 5).unwrap();
    let find = |s: Scenario| rows.iter().find(|r| r.scenario == s && r.group == "minority").unwrap();
    assert!(find(Scenario::EqualizeScorePrecision).type1 < find(Scenario::Baseline).type1);
}

#[test]
fn applicant_posterior_is_precision_weighted() {
    let (mu0, var_theta, var_score, var_other) = (1.0, 4.0, 2.0, 8.0);
    let r = applicant_report(mu0, var_theta, var_score, var_other, 700.0, 0.5).unwrap();
    let (h0, h1, h2) = (1.0 / var_theta, 1.0 / var_score, 1.0 / var_other);
    let expected = (h0 * mu0 + h1 * r.signal + h2 * 0.5) / (h0 + h1 + h2);
    assert!((r.posterior_mean - expected).abs() < 1e-12);
    assert!((r.posterior_sd - (h0 + h1 + h2).recip().sqrt()).abs() < 1e-12);
    assert!((r.score_weight - h1 / (h0 + h1 + h2)).abs() < 1e-12);
    assert!(r.expected_default > 0.0 && r.expected_default < 1.0);

    let better = applicant_report(mu0, var_theta, var_score, var_other, 760.0, 0.5).unwrap();
    assert!(better.posterior_mean > r.posterior_mean);
    assert!(better.expected_default < r.expected_default);
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(roc_report(1.0, 1.0, 1.0, 1.0, 0, 1).is_err());
    assert!(roc_report(1.0, 1.0, 1.0, 1.0, MAX_N + 1, 1).is_err());
    assert!(roc_report(1.0, -1.0, 1.0, 1.0, 10, 1).is_err());
    assert!(counterfactual_report(0.0, 0.4, 10, 1).is_err());
    assert!(applicant_report(1.0, 1.0, 0.0, 1.0, 700.0, 0.0).is_err());
}
