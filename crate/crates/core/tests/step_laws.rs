use ding_core::guidance::{
    ddim_mean, ding_conditional, mcgdiff_tau, step, ChainState, MethodKind, MethodSpec, StepContext,
};
use ding_core::linalg::{gaussian_vector, random_spd};
use ding_core::metrics::empirical_moments;
use ding_core::oracle::{ding_transition_moments, dps_transition_moments, TransitionMoments};
use ding_core::task::build_task;
use ding_core::{AnalyticPrior, EtaSchedule, GaussianPrior, InpaintingTask, Matrix, NoiseSchedule, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const DRAWS: usize = 100_000;

#[allow(clippy::too_many_arguments)]
fn draw_steps(
    kind: MethodKind,
    prior: &AnalyticPrior,
    task: &InpaintingTask,
    es: EtaSchedule,
    x_t: &Vector,
    s: f64,
    t: f64,
    seed: u64,
) -> Vec<Vector> {
    let ctx = StepContext::new(prior, task, NoiseSchedule::linear(), es).unwrap();
    let spec = MethodSpec::new(kind);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..DRAWS)
        .map(|_| {
            let mut state = ChainState::new(x_t.clone(), 0);
            step(&spec, &mut state, s, t, &ctx, &mut rng).unwrap();
            state.x
        })
        .collect()
}

/// Empirical mean and covariance within three standard errors of a Gaussian law.
fn assert_matches(label: &str, draws: &[Vector], mean: &Vector, cov: &Matrix) {
    let n = draws.len() as f64;
    let (m, c) = empirical_moments(draws).unwrap();
    let tr = cov.trace();
    let tr_sq = (cov * cov).trace();
    let mean_bound = 3.0 * (tr / n).sqrt();
    let cov_bound = 3.0 * ((tr * tr + tr_sq) / n).sqrt();
    let mean_gap = (&m - mean).norm();
    let cov_gap = (&c - cov).norm();
    assert!(mean_gap <= mean_bound, "{label}: mean gap {mean_gap:e} > {mean_bound:e}");
    assert!(cov_gap <= cov_bound, "{label}: cov gap {cov_gap:e} > {cov_bound:e}");
}

struct Config {
    prior: AnalyticPrior,
    cov: Matrix,
    task: InpaintingTask,
    es: EtaSchedule,
    x_t: Vector,
    s: f64,
    t: f64,
}

fn random_config(rng: &mut ChaCha20Rng) -> Config {
    let d = rng.random_range(2..=4);
    let cov = random_spd(d, 0.2, 3.0, rng);
    let prior = GaussianPrior::new(Vector::zeros(d), cov.clone()).unwrap().into();
    let x_star = gaussian_vector(d, rng);
    let n_obs = rng.random_range(1..d);
    let masked: Vec<usize> = (n_obs..d).collect();
    let sigma_y = 10f64.powf(rng.random_range(-2.0..0.0));
    let task = build_task(&x_star, &masked, Some(sigma_y)).unwrap();
    let es = [EtaSchedule::Default, EtaSchedule::Sqrt, EtaSchedule::Max, EtaSchedule::Ddpm][rng.random_range(0..4)];
    let t = rng.random_range(0.3..1.0);
    let s = rng.random_range(0.1..t - 0.05);
    let x_t = gaussian_vector(d, rng);
    Config { prior, cov, task, es, x_t, s, t }
}

fn check_against(kind: MethodKind, oracle: impl Fn(&Config) -> TransitionMoments, seed: u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in 0..20 {
        let c = random_config(&mut rng);
        let m = oracle(&c);
        let draws = draw_steps(kind, &c.prior, &c.task, c.es, &c.x_t, c.s, c.t, seed + i);
        assert_matches(&format!("{kind} config {i}"), &draws, &m.mean, &m.cov);
    }
}

#[test]
fn ding_step_matches_oracle_moments() {
    check_against(
        MethodKind::Ding,
        |c| ding_transition_moments(&c.cov, &c.x_t, &c.task, c.s, c.t, &NoiseSchedule::linear(), &c.es).unwrap(),
        500,
    );
}

#[test]
fn dps_step_matches_oracle_moments() {
    check_against(
        MethodKind::DpsAnalytic,
        |c| dps_transition_moments(&c.cov, &c.x_t, &c.task, c.s, c.t, &NoiseSchedule::linear(), &c.es).unwrap(),
        600,
    );
}

fn fixture() -> (AnalyticPrior, InpaintingTask, Vector) {
    let cov = Matrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.5, -0.3, 0.2, -0.3, 0.8]);
    let prior = GaussianPrior::new(Vector::from_vec(vec![0.2, -0.1, 0.4]), cov).unwrap().into();
    let x_star = Vector::from_vec(vec![0.7, -0.2, 1.1]);
    let task = build_task(&x_star, &[1], Some(0.05)).unwrap();
    (prior, task, Vector::from_vec(vec![0.3, 0.8, -0.6]))
}

#[test]
fn ddim_step_is_affine_gaussian_pushforward() {
    let (prior, task, x_t) = fixture();
    let ns = NoiseSchedule::linear();
    let (s, t) = (0.4, 0.7);
    let eta = EtaSchedule::Default.raw(s, t, &ns).unwrap();
    let out = prior.denoise(&x_t, t, &ns);
    let mean = ddim_mean(&out.x0_hat, &out.x1_hat, ns.alpha(s), ns.sigma(s), eta);
    let draws = draw_steps(MethodKind::Ddim, &prior, &task, EtaSchedule::Default, &x_t, s, t, 1);
    assert_matches("ddim", &draws, &mean, &(Matrix::identity(3, 3) * eta * eta));
}

#[test]
fn replacement_observed_coordinates_are_noised_observation() {
    let (prior, task, x_t) = fixture();
    let ns = NoiseSchedule::linear();
    let (s, t) = (0.4, 0.7);
    let draws = draw_steps(MethodKind::Replacement, &prior, &task, EtaSchedule::Default, &x_t, s, t, 2);
    let n = DRAWS as f64;
    for (j, &i) in task.observed().iter().enumerate() {
        let mean = draws.iter().map(|x| x[i]).sum::<f64>() / n;
        let sd = (draws.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let target = ns.alpha(s) * task.y()[j];
        assert!((mean - target).abs() < 3.0 * ns.sigma(s) / n.sqrt());
        assert!((sd - ns.sigma(s)).abs() < 3.0 * ns.sigma(s) / (2.0 * n).sqrt());
    }
}

#[test]
fn mcgdiff_max_eta_matches_closed_form() {
    let (prior, task, x_t) = fixture();
    let ns = NoiseSchedule::linear();
    let (s, t) = (0.4, 0.7);
    let (alpha_s, sigma_s) = ns.coefficients(s);
    let (alpha_t, sigma_t) = ns.coefficients(t);
    let tau = mcgdiff_tau(task.sigma_y(), &ns);
    let (alpha_tau, sigma_tau) = ns.coefficients(tau);
    let var_t_tau = sigma_t * sigma_t - (alpha_t / alpha_tau).powi(2) * sigma_tau * sigma_tau;
    let gamma = sigma_s * sigma_s / (sigma_s * sigma_s + var_t_tau);
    let x0 = prior.denoise(&x_t, t, &ns).x0_hat;
    let mut mean = &x0 * alpha_s;
    let mut cov = Matrix::identity(3, 3) * (sigma_s * sigma_s);
    for (j, &i) in task.observed().iter().enumerate() {
        mean[i] = (1.0 - gamma) * mean[i] + gamma * alpha_s * task.y()[j];
        cov[(i, i)] = var_t_tau * gamma;
    }
    let draws = draw_steps(MethodKind::Mcgdiff, &prior, &task, EtaSchedule::Max, &x_t, s, t, 3);
    assert_matches("mcgdiff", &draws, &mean, &cov);
}

#[test]
fn flowdps_max_eta_matches_closed_form() {
    let (prior, task, x_t) = fixture();
    let ns = NoiseSchedule::linear();
    let (s, t) = (0.4, 0.7);
    let (alpha_s, sigma_s) = ns.coefficients(s);
    let mut x0 = prior.denoise(&x_t, t, &ns).x0_hat;
    for (j, &i) in task.observed().iter().enumerate() {
        x0[i] = alpha_s * x0[i] + sigma_s * task.y()[j];
    }
    let draws = draw_steps(MethodKind::Flowdps, &prior, &task, EtaSchedule::Max, &x_t, s, t, 4);
    assert_matches("flowdps", &draws, &(x0 * alpha_s), &(Matrix::identity(3, 3) * sigma_s * sigma_s));
}

/// Self-normalised importance sampling of `phi(x_s, z) N(x_s; mu, eta^2 I)` for a fixed proxy.
#[test]
fn ding_conditional_matches_twisted_transition() {
    let ns = NoiseSchedule::linear();
    let mut rng = ChaCha20Rng::seed_from_u64(900);
    for instance in 0..3 {
        let d = rng.random_range(2..=4);
        let prior = GaussianPrior::new(gaussian_vector(d, &mut rng) * 0.3, random_spd(d, 0.3, 2.0, &mut rng)).unwrap();
        let t = rng.random_range(0.4..0.9);
        let s = rng.random_range(0.2..t - 0.1);
        let (alpha_s, sigma_s) = ns.coefficients(s);
        let eta = EtaSchedule::Sqrt.raw(s, t, &ns).unwrap();
        let sigma_y = eta * rng.random_range(0.3..2.0) / alpha_s;
        let x_t = gaussian_vector(d, &mut rng) + Vector::from_element(d, 1.0);
        let out = prior.denoise(&x_t, t, &ns);
        let mu = ddim_mean(&out.x0_hat, &out.x1_hat, alpha_s, sigma_s, eta);
        let z = &mu + gaussian_vector(d, &mut rng) * eta;
        let proxy = prior.denoise(&z, s, &ns).x1_hat;
        let observed: Vec<usize> = (0..rng.random_range(1..=2)).collect();
        let masked: Vec<usize> = (observed.len()..d).collect();
        let y = Vector::from_iterator(
            observed.len(),
            observed.iter().map(|&i| (mu[i] + 0.5 * eta * rng.random::<f64>() - sigma_s * proxy[i]) / alpha_s),
        );
        let task = InpaintingTask::new(d, &masked, y, sigma_y, None).unwrap();
        let (mean, std, _) = ding_conditional(&mu, &proxy, eta, alpha_s, sigma_s, &task);

        let n = 1_000_000;
        let mut sum_w = 0.0;
        let mut first = Vector::zeros(d);
        let mut second = Vector::zeros(d);
        for _ in 0..n {
            let x = &mu + gaussian_vector(d, &mut rng) * eta;
            let log_w: f64 = observed
                .iter()
                .enumerate()
                .map(|(j, &i)| -(task.y()[j] - (x[i] - sigma_s * proxy[i]) / alpha_s).powi(2) / (2.0 * sigma_y * sigma_y))
                .sum();
            let w = log_w.exp();
            sum_w += w;
            first += &x * w;
            second += x.component_mul(&x) * w;
        }
        let est_mean = first / sum_w;
        let est_var = second / sum_w - est_mean.component_mul(&est_mean);
        let rel_mean = (&est_mean - &mean).norm() / mean.norm();
        assert!(rel_mean <= 0.02, "instance {instance}: relative mean error {rel_mean}");
        for i in 0..d {
            let var = std[i] * std[i];
            assert!((est_var[i] - var).abs() / var <= 0.05, "instance {instance}: variance {i}");
        }
    }
}
