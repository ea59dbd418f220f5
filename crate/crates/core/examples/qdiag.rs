use tabreg::environments::*;
use tabreg::experiments::*;

fn main() {
    for slip in [0.4f64, 0.5] {
        for n in [9usize, 12, 18] {
            let cfg = SweepConfig {
                env: EnvSpec::strens_loop(slip),
                methods: vec![MethodSpec::DiscountReg, MethodSpec::UniformPrior, MethodSpec::SasPosterior],
                eps_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
                n_datasets: 2000,
                dataset: DatasetConfig {
                    n_tuples: n,
                    sampling_mode: SamplingMode::UniformRandomSa,
                    seed: 5,
                },
                posterior_sampling: PosteriorSamplingConfig::default(),
            };
            let out = run_sweep(&cfg).unwrap();
            let disc: Vec<_> = out.summary.iter().filter(|r| r.method == "discount_reg").collect();
            let unif: Vec<_> = out.summary.iter().filter(|r| r.method == "uniform_prior").collect();
            // Project the z statistic a 200-replicate run would see.
            let scale = (2000f64 / 200.0).sqrt();
            let (mut worst, mut best) = (f64::NEG_INFINITY, f64::INFINITY);
            for (d, u) in disc.iter().zip(unif.iter()).skip(1) {
                let pooled = (d.std_error.powi(2) + u.std_error.powi(2)).sqrt();
                let z200 = if pooled > 0.0 { (u.mean_loss - d.mean_loss) / pooled / scale } else { 0.0 };
                worst = worst.max(z200);
                best = best.min(z200);
            }
            let sas = run_state_specific(&cfg).unwrap();
            let sas_row = &sas.summary[0];
            let (min_m, min_se) = disc.iter().map(|r| (r.mean_loss, r.std_error))
                .fold((f64::INFINITY, 0.0), |acc, x| if x.0 < acc.0 { x } else { acc });
            let margin = (min_m + 2.0 * (sas_row.std_error.powi(2) + min_se.powi(2)).sqrt() * scale) - sas_row.mean_loss;
            println!(
                "loop slip={slip} n={n:<3} projected z200: worst {worst:+5.2} best {best:+5.2}  sas margin {margin:+.3}"
            );
        }
    }
}
