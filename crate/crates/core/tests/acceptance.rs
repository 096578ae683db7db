//! Acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line with the measured quantities before asserting them.
//!
//! Criterion 12 asserts a strict decrease of the simulated error rate across
//! three horizons at ten thousand trials. The middle and long horizons sit so
//! deep in the reliability region that their true error rates are far below
//! one in ten thousand, so both measure exactly zero and the strict decrease
//! cannot be observed at this trial count. The assertion is kept faithful to
//! the stated criterion rather than weakened; every other clause of that
//! criterion is asserted first so the partial evidence is recorded.

use fclab::channel::{toeplitz_bundle, validate_channel, ChannelSpec};
use fclab::coding::{
    cp_from_structure, encode_message, monte_carlo_error_rate, optimal_feedback_generator,
    sk_transmit, structure_from_cp, transmit_with_trajectory, CPParams, CpReconstruction, CpView,
    EncoderSpec, InputPolicy, SchemeConfig,
};
use fclab::kalman::{riccati_run, riccati_steady_iterate, riccati_steady_transform};
use fclab::limits::{
    capacity_search, innovations_rate, limits_report, sensitivity_sum_check, steady_report,
    SearchConfig,
};
use fclab::linalg;
use fclab::properties::{
    check_ma_banded, check_orthogonality, check_predictor_reduction, check_steady_structure,
    covariance_engine, suboptimal_generator_library,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] criterion {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Monic polynomial coefficients (descending, leading one omitted) from real
/// roots.
fn poly_from_roots(roots: &[f64]) -> Vec<f64> {
    let mut poly = vec![1.0];
    for &r in roots {
        let mut next = vec![0.0; poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= r * c;
        }
        poly = next;
    }
    poly[1..].to_vec()
}

/// Twenty-five reproducible systems with source dimension up to 4 and channel
/// order up to 3. Unstable moduli sit in [1.03, 1.10] and stable ones in
/// [0.10, 0.85]; channel roots stay within modulus 0.8.
fn sweep_systems() -> Vec<(EncoderSpec, ChannelSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_5503);
    let mut out = Vec::new();
    while out.len() < 25 {
        let dim = rng.random_range(1..=4usize);
        let m = rng.random_range(0..=3usize);
        let unstable = rng.random_range(1..=dim);
        let eigs: Vec<f64> = (0..dim)
            .map(|i| {
                let mag = if i < unstable {
                    rng.random_range(1.03..1.10)
                } else {
                    rng.random_range(0.10..0.85)
                };
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let raw = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let q = raw.qr().q();
        let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eigs)) * q.transpose();
        let c = DVector::from_fn(dim, |_, _| {
            let v: f64 = rng.random_range(0.3..1.2);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        });
        let Ok(encoder) = EncoderSpec::new(a, c) else {
            continue;
        };
        let f_roots: Vec<f64> = (0..m).map(|_| rng.random_range(-0.8..0.8)).collect();
        let p_roots: Vec<f64> = (0..m).map(|_| rng.random_range(-0.8..0.8)).collect();
        let f = poly_from_roots(&f_roots);
        let p = poly_from_roots(&p_roots);
        let g: Vec<f64> = f.iter().zip(&p).map(|(a, b)| b - a).collect();
        let Ok(channel) = validate_channel(&f, &g) else {
            continue;
        };
        out.push((encoder, channel));
    }
    out
}

/// Steady-state reference systems with degree of instability at most 2.
fn steady_systems() -> Vec<(EncoderSpec, ChannelSpec, f64)> {
    let rot = |r: f64, th: f64| {
        DMatrix::from_row_slice(
            2,
            2,
            &[r * th.cos(), -r * th.sin(), r * th.sin(), r * th.cos()],
        )
    };
    let mut block = DMatrix::<f64>::zeros(3, 3);
    block.view_mut((0, 0), (2, 2)).copy_from(&rot(1.3, 0.7));
    block[(2, 2)] = 0.4;
    vec![
        (
            EncoderSpec::scalar(2.0, 1.0).unwrap(),
            ChannelSpec::awgn(),
            2.0,
        ),
        (
            EncoderSpec::scalar(1.25, 0.8).unwrap(),
            validate_channel(&[0.1], &[0.2]).unwrap(),
            1.25,
        ),
        (
            EncoderSpec::new(
                DMatrix::from_row_slice(2, 2, &[1.4, 0.5, 0.0, 0.5]),
                DVector::from_vec(vec![1.0, -0.3]),
            )
            .unwrap(),
            validate_channel(&[0.2], &[0.25]).unwrap(),
            1.4,
        ),
        (
            EncoderSpec::new(block, DVector::from_vec(vec![1.0, 0.5, 0.7])).unwrap(),
            validate_channel(&[0.3, -0.1], &[0.2, 0.25]).unwrap(),
            1.3 * 1.3,
        ),
    ]
}

#[test]
fn criterion_01_memoryless_closed_forms() {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for p in [1.0_f64, 3.0, 8.0] {
        let a = (1.0 + p).sqrt();
        let enc = EncoderSpec::scalar(a, 1.0).unwrap();
        let sol = riccati_steady_iterate(&enc, &ChannelSpec::awgn(), 1e-13, 20000).unwrap();
        let rep = steady_report(&enc, &ChannelSpec::awgn()).unwrap();
        worst = worst
            .max((sol.sigma[(0, 0)] - p).abs())
            .max((sol.l[0] - p / a).abs())
            .max((rep.rate_innov - 0.5 * (1.0 + p).ln()).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && elapsed < 1.0;
    report(
        "01 memoryless closed forms",
        pass,
        &format!("max deviation {worst:.3e}, elapsed {elapsed:.3}s"),
    );
    assert!(pass, "deviation {worst:.3e}, elapsed {elapsed:.3}s");
}

#[test]
fn criterion_02_recursive_scheme_equals_filter_loop() {
    let a = 2.0_f64;
    let g = (a * a - 1.0).sqrt();
    let horizon = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_5502);
    let x0: f64 = StandardNormal.sample(&mut rng);
    let noise: Vec<f64> = (0..=horizon)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let sk = sk_transmit(a, g, x0, &noise, horizon);
    let enc = EncoderSpec::scalar(a, -g).unwrap();
    let traj = riccati_run(&enc, &ChannelSpec::awgn(), horizon);
    let kf = transmit_with_trajectory(
        &traj,
        &enc,
        &ChannelSpec::awgn(),
        &DVector::from_element(1, x0),
        &noise,
    )
    .unwrap();
    let mut worst = 0.0_f64;
    for t in 0..=horizon {
        worst = worst
            .max((sk.u[t] - kf.u[t]).abs())
            .max((sk.y[t] - kf.y[t]).abs())
            .max((sk.xhat0[t][0] - kf.xhat0[t][0]).abs());
    }
    let pass = worst <= 1e-10;
    report(
        "02 recursive scheme equals filter loop",
        pass,
        &format!("max deviation {worst:.3e} over horizon {horizon}"),
    );
    assert!(pass, "deviation {worst:.3e}");
}

#[test]
fn criterion_03_rate_equality_chain() {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for (encoder, channel) in sweep_systems() {
        let rep = limits_report(&encoder, &channel, 50).unwrap();
        let scale = rep.rate_innov.abs().max(1e-300);
        let max_res = rep
            .residual_matrix
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, v| acc.max(*v));
        worst = worst.max(max_res / scale);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-8 && elapsed < 10.0;
    report(
        "03 rate equality chain",
        pass,
        &format!("worst pairwise relative residual {worst:.3e} over 25 systems, elapsed {elapsed:.2}s"),
    );
    assert!(pass, "residual {worst:.3e}, elapsed {elapsed:.2}s");
}

#[test]
fn criterion_04_power_identity() {
    let mut worst = 0.0_f64;
    for (encoder, channel) in sweep_systems() {
        let rep = limits_report(&encoder, &channel, 50).unwrap();
        worst = worst.max(rel(rep.power_analytic, rep.pmmse_trace));
    }

    // Sampled coupling on one representative system.
    let encoder = EncoderSpec::scalar(2.0, 1.0).unwrap();
    let channel = validate_channel(&[0.2], &[0.3]).unwrap();
    let horizon = 40;
    let rep = limits_report(&encoder, &channel, horizon).unwrap();
    let traj = riccati_run(&encoder, &channel, horizon);
    let trials = 10_000u64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(0xacce_5504);
        rng.set_stream(trial);
        let w = DVector::from_fn(1, |_, _| StandardNormal.sample(&mut rng));
        let noise: Vec<f64> = (0..=horizon)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let tr = transmit_with_trajectory(&traj, &encoder, &channel, &w, &noise).unwrap();
        sum += tr.power_empirical;
        sum_sq += tr.power_empirical * tr.power_empirical;
    }
    let mean = sum / trials as f64;
    let var = (sum_sq / trials as f64 - mean * mean).max(0.0);
    let se = (var / trials as f64).sqrt();
    let z = (mean - rep.power_analytic).abs() / se.max(1e-300);

    let pass = worst <= 1e-8 && z <= 3.0;
    report(
        "04 power identity",
        pass,
        &format!(
            "worst relative route gap {worst:.3e}; sampled power {mean:.5} vs analytic {:.5} is {z:.2} standard errors",
            rep.power_analytic
        ),
    );
    assert!(pass, "route gap {worst:.3e}, sampling z {z:.2}");
}

#[test]
fn criterion_05_orthogonality() {
    let mut worst = 0.0_f64;
    for (encoder, channel) in sweep_systems() {
        let generator = optimal_feedback_generator(&encoder, &channel, 50);
        let ledger = covariance_engine(&encoder, &generator, &channel, 50).unwrap();
        worst = worst.max(check_orthogonality(&ledger));
    }
    let pass = worst <= 1e-9;
    report(
        "05 orthogonality",
        pass,
        &format!("worst strictly-causal cross-moment {worst:.3e} over 25 systems"),
    );
    assert!(pass, "violation {worst:.3e}");
}

#[test]
fn criterion_06_moving_average_bandedness() {
    let encoder = EncoderSpec::new(
        DMatrix::from_row_slice(2, 2, &[1.07, 0.3, 0.0, 0.55]),
        DVector::from_vec(vec![1.0, 0.4]),
    )
    .unwrap();
    let channels = [
        validate_channel(&[0.2], &[0.25]).unwrap(),
        validate_channel(&[0.3, -0.1], &[0.25, 0.2]).unwrap(),
    ];
    let mut worst = 0.0_f64;
    for channel in &channels {
        let generator = optimal_feedback_generator(&encoder, channel, 40);
        let ledger = covariance_engine(&encoder, &generator, channel, 40).unwrap();
        worst = worst.max(check_ma_banded(&ledger, channel.order()));
    }
    let pass = worst <= 1e-9;
    report(
        "06 moving-average bandedness",
        pass,
        &format!("worst out-of-band covariance {worst:.3e} for orders 1 and 2"),
    );
    assert!(pass, "out-of-band mass {worst:.3e}");
}

#[test]
fn criterion_07_sensitivity_sum() {
    let channel = validate_channel(&[0.15], &[0.3]).unwrap();
    let mut worst = 0.0_f64;
    for generator in suboptimal_generator_library(40, 20, 0.25, 0x5eed_0001) {
        worst = worst.max(
            sensitivity_sum_check(&generator, &channel, 40)
                .unwrap()
                .abs(),
        );
    }
    let pass = worst <= 1e-8;
    report(
        "07 sensitivity sum",
        pass,
        &format!("worst log-eigenvalue sum {worst:.3e} over 20 generators"),
    );
    assert!(pass, "sum {worst:.3e}");
}

#[test]
fn criterion_08_steady_state_structure() {
    let mut solver_gap = 0.0_f64;
    let mut tail = 0.0_f64;
    let mut structures_ok = true;
    for (encoder, channel, di) in steady_systems() {
        let sol = riccati_steady_iterate(&encoder, &channel, 1e-12, 50000).unwrap();
        let sigma_tr = riccati_steady_transform(&encoder, &channel).unwrap();
        solver_gap = solver_gap.max(linalg::max_abs_diff(&sol.sigma, &sigma_tr));
        let st = check_steady_structure(&encoder, &channel).unwrap();
        structures_ok = structures_ok && st.pass;
        let traj = riccati_run(&encoder, &channel, 2000);
        tail = tail.max((innovations_rate(&traj, 2000) / 2001.0 - di.ln()).abs());
    }
    let pass = solver_gap <= 1e-8 && structures_ok && tail <= 1e-3;
    report(
        "08 steady-state structure",
        pass,
        &format!(
            "solver gap {solver_gap:.3e}, structure checks {}, per-step tail {tail:.3e}",
            if structures_ok { "all pass" } else { "FAILED" }
        ),
    );
    assert!(
        pass,
        "solver gap {solver_gap:.3e}, structures_ok {structures_ok}, tail {tail:.3e}"
    );
}

#[test]
fn criterion_09_stable_augmentation_invariance() {
    let base = EncoderSpec::scalar(2.0, 1.0).unwrap();
    let augmented = EncoderSpec::new(
        DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.3]),
        DVector::from_vec(vec![1.0, 0.5]),
    )
    .unwrap();
    let ra = steady_report(&base, &ChannelSpec::awgn()).unwrap();
    let rb = steady_report(&augmented, &ChannelSpec::awgn()).unwrap();
    let worst = (ra.rate_innov - rb.rate_innov)
        .abs()
        .max((ra.rate_logdet_ky - rb.rate_logdet_ky).abs())
        .max((ra.rate_toeplitz - rb.rate_toeplitz).abs())
        .max((ra.rate_directed - rb.rate_directed).abs())
        .max((ra.bi - rb.bi).abs())
        .max((ra.power_analytic - rb.power_analytic).abs());
    let pass = worst <= 1e-6;
    report(
        "09 stable augmentation invariance",
        pass,
        &format!("largest steady rate or power shift {worst:.3e}"),
    );
    assert!(pass, "shift {worst:.3e}");
}

#[test]
fn criterion_10_predictor_reduction() {
    let encoder = EncoderSpec::new(
        DMatrix::from_row_slice(2, 2, &[1.08, 0.4, 0.0, 0.5]),
        DVector::from_vec(vec![1.0, -0.6]),
    )
    .unwrap();
    let channel = validate_channel(&[0.2], &[0.25]).unwrap();
    let horizon = 25;
    let mut worst_rate = 0.0_f64;
    let mut worst_power = 0.0_f64;
    for generator in suboptimal_generator_library(horizon, 20, 0.25, 0x5eed_0001) {
        let policy = InputPolicy::from_structure(&encoder, &generator, horizon);
        let (d_rate, d_power) = check_predictor_reduction(&policy, &channel, horizon).unwrap();
        worst_rate = worst_rate.max(d_rate);
        worst_power = worst_power.min(d_power);
    }
    let pass = worst_rate <= 1e-9 && worst_power >= -1e-10;
    report(
        "10 predictor reduction",
        pass,
        &format!(
            "worst directed-information shift {worst_rate:.3e}, smallest power saving {worst_power:.3e}"
        ),
    );
    assert!(pass, "rate shift {worst_rate:.3e}, power {worst_power:.3e}");
}

#[test]
fn criterion_11_covariance_round_trip() {
    let channel = validate_channel(&[0.1], &[0.2]).unwrap();
    let horizon = 20;
    let t1 = horizon + 1;
    let bundle = toeplitz_bundle(&channel, horizon);

    let cp_power = |cp: &CPParams| -> f64 {
        let k_r = cp.source_covariance();
        let ipb = DMatrix::identity(t1, t1) + &cp.b_mat;
        let noise_side = &cp.b_mat * &bundle.z;
        ((&ipb * &k_r * ipb.transpose()).trace() + (&noise_side * noise_side.transpose()).trace())
            / t1 as f64
    };
    let cp_info = |cp: &CPParams| -> f64 {
        let k_r = cp.source_covariance();
        let inner = DMatrix::identity(t1, t1) + &bundle.zinv * k_r * bundle.zinv.transpose();
        0.5 * linalg::cholesky_logdet(&inner).unwrap()
    };

    // Full-rank case: exact reconstruction must preserve power and rate.
    let b = suboptimal_generator_library(horizon, 1, 0.3, 0x5eed_0002)[0]
        .matrix()
        .clone();
    let cp = CPParams {
        cov: DMatrix::identity(t1, t1),
        b_mat: b,
        view: CpView::Exogenous,
        horizon,
    };
    let CpReconstruction::Exact(st) = structure_from_cp(&cp, &channel, horizon).unwrap() else {
        panic!("full-rank covariance must reconstruct exactly");
    };
    let cp2 = cp_from_structure(&st.encoder, &st.generator, &channel, horizon);
    let full_rank_gap = rel(cp_power(&cp), cp_power(&cp2)).max(rel(cp_info(&cp), cp_info(&cp2)));

    // Rank-deficient case: the ridge deviations must shrink monotonically.
    let scalar = EncoderSpec::scalar(1.1, 0.8).unwrap();
    let gen = optimal_feedback_generator(&scalar, &channel, horizon);
    let low = cp_from_structure(&scalar, &gen, &channel, horizon);
    let CpReconstruction::Regularized(attempts) =
        structure_from_cp(&low, &channel, horizon).unwrap()
    else {
        panic!("rank-one covariance cannot reconstruct exactly");
    };
    let deviations: Vec<f64> = attempts.iter().map(|a| a.mi_deviation).collect();
    let decreasing = deviations.windows(2).all(|w| w[1] < w[0]);

    let pass = full_rank_gap <= 1e-8 && decreasing;
    report(
        "11 covariance round trip",
        pass,
        &format!("full-rank gap {full_rank_gap:.3e}, ridge deviations {deviations:?}"),
    );
    assert!(pass, "gap {full_rank_gap:.3e}, deviations {deviations:?}");
}

#[test]
fn criterion_12_monte_carlo_transmission() {
    let start = Instant::now();
    let scheme = SchemeConfig::scalar_over(ChannelSpec::awgn());
    let t_list = [10usize, 25, 40];
    let rows = monte_carlo_error_rate(&scheme, 3.0, 0.2, &t_list, 10_000, 7).unwrap();
    let rows_again = monte_carlo_error_rate(&scheme, 3.0, 0.2, &t_list, 10_000, 7).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let deterministic = rows
        .iter()
        .zip(&rows_again)
        .all(|(a, b)| a.pe == b.pe && a.power_hat == b.power_hat && a.m_t == b.m_t);
    let power_ok = rows.iter().all(|r| r.power_hat <= 1.05 * 3.0);
    let final_ok = rows[2].pe < 0.05;
    let pe: Vec<f64> = rows.iter().map(|r| r.pe).collect();
    println!(
        "criterion 12 measurements: Pe {pe:?}, power {:?}, elapsed {elapsed:.1}s, deterministic {deterministic}",
        rows.iter().map(|r| r.power_hat).collect::<Vec<_>>()
    );
    assert!(deterministic, "identical seeds must reproduce identical rows");
    assert!(power_ok, "empirical power exceeded 1.05 of the budget");
    assert!(final_ok, "Pe at the longest horizon must be below 0.05");
    assert!(elapsed < 60.0, "run took {elapsed:.1}s");

    // The strict decrease is asserted exactly as stated. At these horizons
    // the true error rates beyond the first are far below the resolution of
    // ten thousand trials, so both later entries measure zero and the strict
    // inequality between them is not observable at this sample size. See the
    // leading PASS/FAIL line for the measured values.
    let strictly_decreasing = pe.windows(2).all(|w| w[1] < w[0]);
    report(
        "12 monte carlo transmission",
        strictly_decreasing,
        &format!("Pe sequence {pe:?} at 10000 trials"),
    );
    assert!(
        strictly_decreasing,
        "Pe sequence {pe:?} is not strictly decreasing"
    );
}

#[test]
fn criterion_13_search_rank_soft_check() {
    let channel = validate_channel(&[0.2], &[0.3]).unwrap();
    let cfg = SearchConfig {
        restarts: 4,
        max_iters: 150,
        ..SearchConfig::default()
    };
    let out = capacity_search(&channel, 8, 8, 3.0, &cfg).unwrap();
    let within = out.rank_within_bound;
    report(
        "13 search rank soft check",
        true,
        &format!(
            "best-found covariance rank {} against bound {}; {}",
            out.kr_rank,
            out.kr_rank_bound,
            if within {
                "within the bound"
            } else {
                "search-quality warning: rank exceeds the bound, local search is not a certified optimizer"
            }
        ),
    );
    // Soft check: the rank is reported, never asserted. The run itself must
    // produce a usable scheme.
    assert!(out.feasible, "search returned no feasible scheme");
    assert!(out.power <= 3.0 + 1e-6, "power {} exceeds budget", out.power);
}

#[test]
fn message_grid_is_consistent_with_the_decoder() {
    // Supporting sanity for criterion 12's decoder: grid centers are
    // symmetric and decoding is exact on noiseless centers.
    for m_t in [1u64, 2, 3, 17, 1024] {
        for index in 1..=m_t.min(64) {
            let center = encode_message(index, m_t).unwrap();
            assert!(center.abs() <= 0.5);
            assert_eq!(
                fclab::coding::decode_message(center, m_t).unwrap(),
                index,
                "grid round trip failed at {index}/{m_t}"
            );
        }
    }
}
