use mixtwice::*;

fn slope_mae(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let mae = pairs.iter().map(|p| (p.1 - p.0).abs()).sum::<f64>() / n;
    (sxy / sxx, mae)
}

#[test]
fn probe_criterion4_normal() {
    let spec = ScenarioSpec::normal_default(1000, 10, 100, 1);
    let t0 = std::time::Instant::now();
    let report = run_scenario(&spec, &RunSettings::default()).unwrap();
    let pairs: Vec<(f64, f64)> = report.replicates.iter().map(|r| (r.pi0_true, r.pi0_hat)).collect();
    let (slope, mae) = slope_mae(&pairs);
    println!("normal: slope={slope:.3} mae={mae:.4} took={:?}", t0.elapsed());
    println!("mean W1(g) = {:.4}", report.mean_g_wasserstein);
    // FDR calibration snapshot
    for s in &report.strata {
        let l = &s.levels[1]; // level 0.1
        println!(
            "stratum [{:.3},{:.3}] n={}: thr fdr={:.4} (se {:.4}) cum fdr={:.4} (se {:.4}) mean pi0hat={:.3} true={:.3}",
            s.lo, s.hi, s.replicates, l.threshold_fdr, l.threshold_fdr_se,
            l.cumulative_fdr, l.cumulative_fdr_se, s.mean_pi0_hat, s.mean_pi0_true
        );
    }
}

#[test]
fn probe_criterion5_sample_sizes() {
    for n in [5usize, 10, 30] {
        let spec = ScenarioSpec {
            shape: GAltShape::NearNormal,
            pi0_law: Pi0Law::Fixed(0.9),
            variance_law: VarianceLaw::PointMass(1.0),
            n_per_group: n,
            m: 1000,
            replicates: 60,
            seed: 2,
        };
        let report = run_scenario(&spec, &RunSettings::default()).unwrap();
        let mae: f64 = report.replicates.iter().map(|r| (r.pi0_hat - 0.9).abs()).sum::<f64>()
            / report.replicates.len() as f64;
        println!("n={n}: mean|pi0hat-0.9| = {mae:.4}");
    }
}
