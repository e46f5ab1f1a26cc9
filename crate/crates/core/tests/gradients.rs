//! Analytic gradients against central finite differences.

use codealign::contrastive::{
    infonce_grad, infonce_loss, CosineSimilarity, Direction, InfoNceConfig,
};
use codealign::nncore::{MlpConfig, MlpParams, Mode, RealMatrix};
use codealign::rng::{derive_seed, rng_from};
use codealign::trainer::pipeline_step;
use rand::Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients
/// (biases feeding a batch norm) from dividing round-off by zero.
fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> RealMatrix {
    let mut rng = rng_from(seed);
    RealMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Perturbs every trainable scalar of `head` and compares against `analytic`.
fn check_head(
    head: &MlpParams,
    analytic: Vec<Vec<f64>>,
    loss: impl Fn(&MlpParams) -> f64,
    floor: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (b, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let mut plus = head.clone();
            plus.trainable_mut()[b][i] += H;
            let mut minus = head.clone();
            minus.trainable_mut()[b][i] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(grad[i], numeric, floor));
        }
    }
    worst
}

fn owned(g: Vec<&[f64]>) -> Vec<Vec<f64>> {
    g.into_iter().map(<[f64]>::to_vec).collect()
}

#[test]
fn mlp_gradients_match_finite_differences_on_20_configs() {
    for case in 0..20u64 {
        let mut rng = rng_from(derive_seed(11, &[case]));
        let layers = 1 + (case % 3) as usize;
        let batch = if case % 2 == 0 { 2 } else { 4 };
        let cfg = MlpConfig {
            d_in: rng.random_range(1..=8),
            d_hidden: rng.random_range(1..=8),
            d_out: rng.random_range(1..=8),
            num_layers: layers,
            seed: case,
        };
        let head = MlpParams::init(&cfg).unwrap();
        let x = gaussian(batch, cfg.d_in, derive_seed(12, &[case]));
        let r = gaussian(batch, cfg.d_out, derive_seed(13, &[case]));
        // L = Σ r ⊙ tanh(y) keeps the upstream gradient non-trivial
        let loss = |p: &MlpParams| {
            let (y, _) = p.clone().forward(&x, Mode::Train).unwrap();
            y.as_slice()
                .iter()
                .zip(r.as_slice())
                .map(|(a, b)| b * a.tanh())
                .sum::<f64>()
        };
        let mut work = head.clone();
        let (y, cache) = work.forward(&x, Mode::Train).unwrap();
        let dy = RealMatrix::from_fn(batch, cfg.d_out, |i, j| {
            r.get(i, j) * (1.0 - y.get(i, j).tanh().powi(2))
        });
        let grads = work.backward(&cache, &dy).unwrap();
        let worst = check_head(&head, owned(grads.trainable()), loss, 1e-3);
        assert!(
            worst < 1e-5,
            "case {case} ({cfg:?}, batch {batch}): {worst:e}"
        );
    }
}

#[test]
fn infonce_gradient_matches_finite_differences() {
    for (k, &tau) in [0.05, 0.07, 0.5, 1.0].iter().enumerate() {
        for direction in [Direction::CodeToAudio, Direction::Symmetric] {
            let cfg = InfoNceConfig {
                temperature: tau,
                direction,
            };
            let mut rng = rng_from(derive_seed(21, &[k as u64]));
            let s = RealMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let g = infonce_grad(&s, &cfg).unwrap();
            for i in 0..25 {
                let (mut p, mut m) = (s.clone(), s.clone());
                p.as_mut_slice()[i] += H;
                m.as_mut_slice()[i] -= H;
                let numeric =
                    (infonce_loss(&p, &cfg).unwrap() - infonce_loss(&m, &cfg).unwrap()) / (2.0 * H);
                let e = rel_err(g.as_slice()[i], numeric, 1e-3);
                assert!(e < 1e-6, "τ {tau} {direction:?} entry {i}: {e:e}");
            }
        }
    }
}

#[test]
fn cosine_chain_rule_matches_end_to_end_differences() {
    let cfg = InfoNceConfig {
        temperature: 0.5,
        direction: Direction::Symmetric,
    };
    let c = gaussian(4, 3, 31);
    let a = gaussian(4, 3, 32);
    let loss = |c: &RealMatrix, a: &RealMatrix| {
        infonce_loss(CosineSimilarity::compute(c, a).unwrap().matrix(), &cfg).unwrap()
    };
    let sim = CosineSimilarity::compute(&c, &a).unwrap();
    let (dc, da) = sim
        .backward(&infonce_grad(sim.matrix(), &cfg).unwrap())
        .unwrap();
    for (side, analytic) in [(0, &dc), (1, &da)] {
        for i in 0..12 {
            let (mut cp, mut ap, mut cm, mut am) = (c.clone(), a.clone(), c.clone(), a.clone());
            if side == 0 {
                cp.as_mut_slice()[i] += H;
                cm.as_mut_slice()[i] -= H;
            } else {
                ap.as_mut_slice()[i] += H;
                am.as_mut_slice()[i] -= H;
            }
            let numeric = (loss(&cp, &ap) - loss(&cm, &am)) / (2.0 * H);
            let e = rel_err(analytic.as_slice()[i], numeric, 1e-3);
            assert!(e < 1e-6, "side {side} entry {i}: {e:e}");
        }
    }
}

fn pipeline_case(
    n: usize,
    d_c: usize,
    d_a: usize,
    d_out: usize,
    layers: usize,
    seed: u64,
    cfg: InfoNceConfig,
) -> f64 {
    let head = |d_in, s| {
        MlpParams::init(&MlpConfig {
            d_in,
            d_hidden: 7,
            d_out,
            num_layers: layers,
            seed: s,
        })
        .unwrap()
    };
    let code_head = head(d_c, derive_seed(seed, &[1]));
    let audio_head = head(d_a, derive_seed(seed, &[2]));
    let xc = gaussian(n, d_c, derive_seed(seed, &[3]));
    let xa = gaussian(n, d_a, derive_seed(seed, &[4]));
    let step = pipeline_step(
        &mut code_head.clone(),
        &mut audio_head.clone(),
        &xc,
        &xa,
        &cfg,
    )
    .unwrap();
    let loss = |c: &MlpParams, a: &MlpParams| {
        pipeline_step(&mut c.clone(), &mut a.clone(), &xc, &xa, &cfg)
            .unwrap()
            .loss
    };
    let wc = check_head(
        &code_head,
        owned(step.code.trainable()),
        |p| loss(p, &audio_head),
        1e-3,
    );
    let wa = check_head(
        &audio_head,
        owned(step.audio.trainable()),
        |p| loss(&code_head, p),
        1e-3,
    );
    wc.max(wa)
}

#[test]
fn full_pipeline_gradient_on_the_tiny_instance() {
    for direction in [Direction::CodeToAudio, Direction::Symmetric] {
        let cfg = InfoNceConfig {
            temperature: 0.07,
            direction,
        };
        let worst = pipeline_case(8, 6, 5, 4, 2, 41, cfg);
        assert!(worst < 1e-5, "{direction:?}: {worst:e}");
    }
}
