//! Acceptance suite: one PASS/FAIL/SKIP line per criterion, nonzero exit on
//! any failure. Case-study criteria look for `polio.csv` and
//! `drunkenness.csv` in `$INAR_DATA_DIR` or `tests/data/`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DVector;

use inar_cusum::changepoint::{
    changepoint_scan, psi_alpha, psi_mu, AlternativeQuantities, ScanKind,
};
use inar_cusum::cli::{changepoint_series, load_series, test_series, FitArgs, LoadedSeries};
use inar_cusum::cusum::{alpha_star, critical_value, cusum_path, Functional, TestConfig, TestKind};
use inar_cusum::estimate::{cls_estimate, regressor};
use inar_cusum::linalg::inverse_sqrt;
use inar_cusum::model::{
    moment_matrix_c, simulate, ChangeSpec, InarModel, InnovationSpec, LagSupport,
};
use inar_cusum::montecarlo::{
    bridge_tail, changepoint_error_quantiles, empirical_power, empirical_size, estimator_rates,
    loglog_slope, max_partial_sum_rate, partial_sum_variance, theta_hat_under_change, Execution,
};

const EXEC: Execution = Execution::Parallel;

type Criterion = (&'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

/// Collects named checks; the criterion passes when all of them do.
#[derive(Default)]
struct Checks {
    lines: Vec<String>,
    failed: bool,
}

impl Checks {
    fn check(&mut self, ok: bool, msg: String) {
        if !ok {
            self.failed = true;
        }
        self.lines
            .push(format!("{}{msg}", if ok { "" } else { "!" }));
    }

    fn near(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        self.check(
            (got - want).abs() <= tol,
            format!("{name}={got:.5} (want {want}±{tol})"),
        );
    }

    fn runtime(&mut self, elapsed: Duration, cap: Duration) {
        self.check(
            elapsed < cap,
            format!(
                "runtime {:.2}s (cap {}s)",
                elapsed.as_secs_f64(),
                cap.as_secs()
            ),
        );
    }

    fn finish(self) -> Outcome {
        let msg = self.lines.join("; ");
        if self.failed {
            Outcome::Fail(msg)
        } else {
            Outcome::Pass(msg)
        }
    }
}

fn ar1(alpha: f64, mu: f64) -> InarModel {
    InarModel::new(vec![alpha], InnovationSpec::poisson(mu).unwrap()).unwrap()
}

fn mu_change() -> ChangeSpec {
    ChangeSpec::new(0.5, ar1(0.3, 2.0), ar1(0.3, 1.0)).unwrap()
}

fn alpha_change() -> ChangeSpec {
    ChangeSpec::new(0.5, ar1(0.5, 1.0), ar1(0.2, 1.0)).unwrap()
}

fn data_file(name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os("INAR_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data"));
    let path = dir.join(name);
    path.is_file().then_some(path)
}

fn fit_args(
    file: PathBuf,
    p: Option<usize>,
    lags: Option<Vec<usize>>,
    from_row: Option<usize>,
) -> FitArgs {
    FitArgs {
        file,
        p,
        lags,
        from_row,
        to_row: None,
    }
}

fn load(args: &FitArgs) -> Result<LoadedSeries, String> {
    load_series(args).map_err(|e| e.to_string())
}

fn criterion_1() -> Outcome {
    let Some(path) = data_file("polio.csv") else {
        return Outcome::Skip(
            "polio.csv not found (run scripts/fetch_datasets.sh or set INAR_DATA_DIR)".into(),
        );
    };
    let start = Instant::now();
    let mut c = Checks::default();
    let loaded = match load(&fit_args(path, Some(1), None, None)) {
        Ok(l) => l,
        Err(e) => return Outcome::Fail(e),
    };
    let report = match test_series(&loaded, TestKind::TwoSided, 0.05, Some(&[1, 2])) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let elapsed = start.elapsed();
    c.near("alpha1", report.fit.theta_hat[0], 0.30646, 5e-5);
    c.near("mu", report.fit.theta_hat[1], 0.94091, 5e-5);
    c.near("stat1", report.components[0].statistic, 1.2647, 0.02);
    c.near("stat2", report.components[1].statistic, 1.1232, 0.02);
    c.near("critical", report.critical_value, 1.48, 0.005);
    c.check(!report.reject, format!("reject={}", report.reject));
    c.runtime(elapsed, Duration::from_secs(1));
    c.finish()
}

fn criterion_2() -> Outcome {
    let Some(path) = data_file("drunkenness.csv") else {
        return Outcome::Skip(
            "drunkenness.csv not found (run scripts/fetch_datasets.sh or set INAR_DATA_DIR)".into(),
        );
    };
    let start = Instant::now();
    let mut c = Checks::default();
    let run = || -> Result<_, String> {
        let loaded = load(&fit_args(path.clone(), None, Some(vec![1, 12]), None))?;
        let report =
            test_series(&loaded, TestKind::TwoSided, 0.05, None).map_err(|e| e.to_string())?;
        let (_, cp) = changepoint_series(&loaded, ScanKind::ArgmaxAbsSum, Some(1))
            .map_err(|e| e.to_string())?;
        let raw_row = loaded.raw_row(cp.tau_hat);
        let post = load(&fit_args(path.clone(), Some(1), None, Some(raw_row)))?;
        let post_report =
            test_series(&post, TestKind::TwoSided, 0.05, None).map_err(|e| e.to_string())?;
        Ok((
            loaded.series.len(),
            report,
            cp.tau_hat,
            raw_row,
            post_report,
        ))
    };
    let (n, report, tau_hat, raw_row, post) = match run() {
        Ok(v) => v,
        Err(e) => return Outcome::Fail(e),
    };
    let elapsed = start.elapsed();
    c.check(n == 139, format!("n={n}"));
    for (i, want) in [0.8154, 0.1419, 9.6944].into_iter().enumerate() {
        c.near(
            &format!("theta{}", i + 1),
            report.fit.theta_hat[i],
            want,
            5e-4,
        );
    }
    for (i, want) in [2.0333, 1.3497, 1.5788].into_iter().enumerate() {
        c.near(
            &format!("stat{}", i + 1),
            report.components[i].statistic,
            want,
            0.02,
        );
    }
    c.near("critical", report.critical_value, 1.545, 0.005);
    c.check(report.reject, format!("reject={}", report.reject));
    c.check(
        tau_hat == 41 && raw_row == 53,
        format!("tau_hat={tau_hat} raw_row={raw_row}"),
    );
    c.near("post_alpha1", post.fit.theta_hat[0], 0.8915, 5e-4);
    c.near("post_mu", post.fit.theta_hat[1], 24.8429, 5e-4);
    c.check(!post.reject, format!("post_reject={}", post.reject));
    c.runtime(elapsed, Duration::from_secs(1));
    c.finish()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let want = (-(0.05f64).ln() / 2.0).sqrt();
    c.near(
        "C_one_sided(0.05)",
        critical_value(Functional::OneSided, 0.05),
        want,
        1e-8,
    );
    c.near(
        "C_two_sided(0.0253)",
        critical_value(Functional::TwoSided, 0.0253),
        1.48,
        0.005,
    );
    match bridge_tail(Functional::TwoSided, 1.48, 100_000, 2000, 2024, EXEC) {
        Ok(t) => c.near("bridge_tail(1.48)", t.probability, 0.0253, 0.005),
        Err(e) => c.check(false, e.to_string()),
    }
    c.runtime(start.elapsed(), Duration::from_secs(120));
    c.finish()
}

fn two_sided_all(dim: usize) -> TestConfig {
    TestConfig::all_components(dim, TestKind::TwoSided, 0.05).unwrap()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    match empirical_size(&ar1(0.3, 1.0), 1000, 2000, &two_sided_all(2), 4, EXEC) {
        Ok(s) => {
            let r = s.rejection_rate.unwrap_or(f64::NAN);
            c.check(
                (0.03..=0.08).contains(&r),
                format!(
                    "size={r:.4} (se {:.4}, want [0.03, 0.08])",
                    s.rejection_se.unwrap_or(f64::NAN)
                ),
            );
            c.check(
                s.failures.is_empty(),
                format!("failed replicas {:?}", s.failures),
            );
        }
        Err(e) => c.check(false, e.to_string()),
    }
    c.runtime(start.elapsed(), Duration::from_secs(600));
    c.finish()
}

fn criterion_5() -> Outcome {
    let mut c = Checks::default();
    match empirical_power(&mu_change(), 1000, 1000, &two_sided_all(2), 5, EXEC) {
        Ok(s) => {
            let r = s.rejection_rate.unwrap_or(f64::NAN);
            c.check(
                r >= 0.9,
                format!("power(mu 2->1, n=1000)={r:.4} (want >= 0.9)"),
            );
        }
        Err(e) => c.check(false, e.to_string()),
    }
    let change = alpha_change();
    match empirical_power(&change, 2000, 1000, &two_sided_all(2), 55, EXEC) {
        Ok(s) => {
            let r = s.rejection_rate.unwrap_or(f64::NAN);
            c.check(
                r >= 0.9,
                format!("power(alpha1 0.5->0.2, n=2000)={r:.4} (want >= 0.9)"),
            );
        }
        Err(e) => c.check(false, e.to_string()),
    }
    // locating the coefficient change with the lag-weighted scan
    match changepoint_error_quantiles(
        &change,
        &[2000],
        200,
        ScanKind::ArgmaxAbsSum,
        Some(1),
        56,
        EXEC,
    ) {
        Ok(rows) => c.check(
            rows[0].abs_error_p90 <= 0.1 * 2000.0,
            format!(
                "weighted scan p90|tau_hat-tau|={:.1}",
                rows[0].abs_error_p90
            ),
        ),
        Err(e) => c.check(false, e.to_string()),
    }
    c.finish()
}

fn mean_rate(results: Vec<inar_cusum::Result<f64>>) -> Result<f64, String> {
    let v: Vec<f64> = results
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn criterion_6() -> Outcome {
    let mut c = Checks::default();
    let mu = mu_change();
    let analytic = (|| {
        let cp = moment_matrix_c(&mu.pre)?.matrix;
        let cq = moment_matrix_c(&mu.post)?.matrix;
        psi_mu(mu.rho, mu.pre.mu(), mu.post.mu(), &cp, &cq)
    })();
    match (
        analytic,
        mean_rate(max_partial_sum_rate(&mu, 20_000, 200, None, 6, EXEC)),
    ) {
        (Ok(psi), Ok(m)) => c.check(
            ((m - psi) / psi).abs() <= 0.1,
            format!("mu change: mean max S_k/n={m:.5}, psi={psi:.5}"),
        ),
        (a, m) => c.check(false, format!("{a:?} {m:?}")),
    }
    let al = alpha_change();
    let analytic = (|| {
        let cp = moment_matrix_c(&al.pre)?.matrix;
        let cq = moment_matrix_c(&al.post)?.matrix;
        psi_alpha(
            al.rho,
            1,
            al.pre.coefficients()[0],
            al.post.coefficients()[0],
            &cp,
            &cq,
        )
    })();
    match (
        analytic,
        mean_rate(max_partial_sum_rate(&al, 20_000, 200, Some(1), 66, EXEC)),
    ) {
        (Ok(psi), Ok(m)) => c.check(
            ((m - psi) / psi).abs() <= 0.1,
            format!("alpha change: mean max S_k/n={m:.5}, psi_1={psi:.5}"),
        ),
        (a, m) => c.check(false, format!("{a:?} {m:?}")),
    }
    c.finish()
}

fn criterion_7() -> Outcome {
    let mut c = Checks::default();
    let ns = [500, 1000, 2000, 4000];
    match changepoint_error_quantiles(
        &mu_change(),
        &ns,
        1000,
        ScanKind::ArgmaxAbsSum,
        None,
        7,
        EXEC,
    ) {
        Ok(rows) => {
            let p90: Vec<f64> = rows.iter().map(|r| r.abs_error_p90).collect();
            c.check(p90[3] <= p90[0] + 5.0, format!("p90 by n {ns:?} = {p90:?}"));
        }
        Err(e) => c.check(false, e.to_string()),
    }
    // negative control: no change, the error against n/2 grows like n
    let null = ChangeSpec::new(0.5, ar1(0.3, 2.0), ar1(0.3, 2.0)).unwrap();
    match changepoint_error_quantiles(
        &null,
        &[500, 4000],
        1000,
        ScanKind::ArgmaxAbsSum,
        None,
        77,
        EXEC,
    ) {
        Ok(rows) => {
            let (a, b) = (rows[0].abs_error_p90, rows[1].abs_error_p90);
            c.check(
                b >= 4.0 * a,
                format!("no-change control p90 {a:.1} -> {b:.1} (want ratio >= 4)"),
            );
        }
        Err(e) => c.check(false, e.to_string()),
    }
    c.finish()
}

fn criterion_8() -> Outcome {
    let mut c = Checks::default();
    let ns = [500, 2000, 8000];
    match estimator_rates(&ar1(0.3, 1.0), &ns, 500, 8, EXEC) {
        Ok(rows) => {
            let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
            let theta: Vec<f64> = rows.iter().map(|r| r.theta_rmse).collect();
            let sigma: Vec<f64> = rows.iter().map(|r| r.sigma2_mae).collect();
            let s1 = loglog_slope(&x, &theta);
            let s2 = loglog_slope(&x, &sigma);
            c.near("slope RMSE(theta)", s1, -0.5, 0.15);
            c.near("slope |sigma2 err|", s2, -0.5, 0.15);
        }
        Err(e) => c.check(false, e.to_string()),
    }
    let change = mu_change();
    let target = AlternativeQuantities::from_models(change.rho, &change.pre, &change.post)
        .map(|q| q.theta_tilde);
    let fits: Result<Vec<DVector<f64>>, _> = theta_hat_under_change(&change, 100_000, 20, 88, EXEC)
        .into_iter()
        .collect();
    match (target, fits) {
        (Ok(t), Ok(fits)) => {
            let mean =
                fits.iter().fold(DVector::zeros(t.len()), |acc, f| acc + f) / fits.len() as f64;
            let err = (&mean - &t).amax();
            let worst = fits.iter().map(|f| (f - &t).amax()).fold(0.0, f64::max);
            c.check(
                err <= 0.02,
                format!(
                    "theta_tilde={:?}, mean theta_hat err={err:.4}, worst replica {worst:.4}",
                    t.as_slice()
                ),
            );
        }
        (a, b) => c.check(false, format!("{:?} {:?}", a.err(), b.err())),
    }
    c.finish()
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let model = InarModel::new(vec![0.4, 0.2], InnovationSpec::poisson(1.5).unwrap()).unwrap();
    let support = LagSupport::full(2);
    let series = simulate(&model, 2000, &[3, 3], 9).unwrap();
    match cls_estimate(&series, &support) {
        Ok(fit) => {
            let path = cusum_path(&series, &fit).unwrap();
            let ends = path.at(0).amax().max(path.at(path.n()).amax());
            c.check(ends <= 1e-8, format!("path endpoints {ends:.2e}"));

            let mut score = DVector::zeros(support.dim());
            let mut scale = DVector::zeros(support.dim());
            for k in 1..=series.len() {
                let z = regressor(&series, k, &support);
                score += &z * fit.residuals[k - 1];
                scale += z * series.at(k as isize) as f64;
            }
            let rel = score.component_div(&scale).amax();
            c.check(rel <= 1e-8, format!("orthogonality {rel:.2e}"));

            let r = inverse_sqrt(&fit.info_hat).unwrap();
            let recon = (&r * &fit.info_hat * &r - nalgebra::DMatrix::identity(3, 3)).amax();
            c.check(recon <= 1e-8, format!("inverse_sqrt {recon:.2e}"));
        }
        Err(e) => c.check(false, e.to_string()),
    }

    let mut worst: f64 = 0.0;
    for alpha in [0.001, 0.01, 0.05, 0.1, 0.5] {
        for d in 1..=13 {
            let back = 1.0 - (1.0 - alpha_star(alpha, d)).powi(d as i32);
            worst = worst.max((back - alpha).abs());
        }
    }
    c.check(worst <= 1e-12, format!("alpha_star round-trip {worst:.2e}"));

    let ties = [1.0, -1.0, 1.0, -1.0, 0.0];
    let ones = [1.0; 5];
    let max = changepoint_scan(&ties, &ones, ScanKind::ArgmaxSum)
        .unwrap()
        .tau_hat;
    let min = changepoint_scan(&ties, &ones, ScanKind::ArgminSum)
        .unwrap()
        .tau_hat;
    let abs = changepoint_scan(&[-1.0, 2.0, -2.0, 1.0], &[1.0; 4], ScanKind::ArgmaxAbsSum)
        .unwrap()
        .tau_hat;
    c.check(
        (max, min, abs) == (1, 2, 1),
        format!("ties -> ({max}, {min}, {abs})"),
    );

    let ns = [1000, 2000, 4000, 8000];
    let vars: Result<Vec<f64>, _> = ns
        .iter()
        .map(|&n| partial_sum_variance(&ar1(0.3, 1.0), n, 400, 99, EXEC))
        .collect();
    match vars {
        Ok(v) => {
            let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
            let s = loglog_slope(&x, &v);
            c.check(
                (0.85..=1.15).contains(&s),
                format!("partial-sum variance slope {s:.3}"),
            );
        }
        Err(e) => c.check(false, e.to_string()),
    }
    c.runtime(start.elapsed(), Duration::from_secs(120));
    c.finish()
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 polio case study", criterion_1),
        ("2 drunkenness case study", criterion_2),
        ("3 critical values", criterion_3),
        ("4 empirical size", criterion_4),
        ("5 power", criterion_5),
        ("6 drift rate", criterion_6),
        ("7 change-point error boundedness", criterion_7),
        ("8 estimator rates", criterion_8),
        ("9 structural invariants", criterion_9),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(m) => println!("PASS [{name}] ({secs:.1}s) {m}"),
            Outcome::Fail(m) => {
                failed += 1;
                println!("FAIL [{name}] ({secs:.1}s) {m}");
            }
            Outcome::Skip(m) => println!("SKIP [{name}] {m}"),
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
