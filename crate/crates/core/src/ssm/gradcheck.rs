use super::config::ModelConfig;
use super::forward::SsmState;
use super::params::{init_params, ParamLayout};
use super::rng::CounterRng;
use super::train::{chunk_loss, Trainer};

pub(crate) struct GradCheck {
    pub max_rel: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Denominator floor for the relative error. Central differences at step
/// 1e-5 in double precision carry absolute noise around 1e-10, so gradients
/// smaller than this are compared on an absolute scale.
pub(crate) const REL_FLOOR: f64 = 1e-6;

pub(crate) fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 4,
        d_state: 2,
        d_inner: 8,
        d_conv: 4,
        n_layers: 2,
        chunk_size: 8,
        ..ModelConfig::default()
    }
}

/// Compares analytic chunk gradients with central differences for every
/// parameter. Weights are perturbed away from their initial values and the
/// chunk starts from a non-zero state, so every code path carries signal.
pub(crate) fn run(seed: u64) -> GradCheck {
    let cfg = small_config();
    let v_e = 11;
    let layout = ParamLayout::new(&cfg, v_e);
    let mut p: Vec<f64> = init_params(&layout, seed);
    let mut rng = CounterRng::new(seed ^ 0xA5A5);
    for x in p.iter_mut() {
        *x += rng.normal(0.3);
    }
    let mut snap = SsmState::<f64>::zeros(&layout.dims);
    for x in snap.hidden.iter_mut().chain(snap.conv.iter_mut()) {
        *x = rng.normal(0.5);
    }
    let chunk: Vec<usize> = (0..cfg.chunk_size)
        .map(|_| (rng.next_u64() % v_e as u64) as usize)
        .collect();

    let mut tr = Trainer::<f64>::new(&layout, cfg.chunk_size);
    tr.loss_and_grad(&layout, &p, &snap, &chunk, cfg.label_smoothing)
        .unwrap();
    let analytic = tr.grads.clone();

    let h = 1e-5;
    let mut out = GradCheck {
        max_rel: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + h;
        let up = tr.loss(&layout, &p, &snap, &chunk, cfg.label_smoothing);
        p[k] = orig - h;
        let down = tr.loss(&layout, &p, &snap, &chunk, cfg.label_smoothing);
        p[k] = orig;
        let num = (up - down) / (2.0 * h);
        let a = analytic[k];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(REL_FLOOR);
        if rel > out.max_rel {
            out.max_rel = rel;
            out.worst_index = k;
        }
        out.checked += 1;
    }
    out
}

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in [1, 2, 3] {
        let r = run(seed);
        eprintln!("gradcheck seed {seed}: max rel {:.3e} over {} params", r.max_rel, r.checked);
        assert_eq!(r.checked, ParamLayout::new(&small_config(), 11).total);
        assert!(r.max_rel <= 1e-3, "seed {seed}: rel {} at {}", r.max_rel, r.worst_index);
    }
}

#[test]
fn loss_examples() {
    let v = 7usize;
    let uniform = vec![vec![0.25; v]];
    for eps in [0.0, 0.12, 0.5] {
        assert!((chunk_loss(&uniform, &[3], eps) - (v as f64).ln()).abs() < 1e-12);
    }
    // p = (0.75, 0.25)
    let l = vec![vec![3f64.ln(), 0.0]];
    let expect = 0.88 * -(0.75f64.ln()) + 0.12 * -(0.75f64.ln() + 0.25f64.ln()) / 2.0;
    let got = chunk_loss(&l, &[0], 0.12);
    assert!((got - expect).abs() < 1e-12);
    assert!((got - 0.35360).abs() < 5e-5, "{got}");
    assert!((chunk_loss(&l, &[0], 0.0) + 0.75f64.ln()).abs() < 1e-12);
}

#[test]
fn single_token_chunk_has_no_gradient() {
    let cfg = small_config();
    let layout = ParamLayout::new(&cfg, 5);
    let p: Vec<f64> = init_params(&layout, 1);
    let mut tr = Trainer::new(&layout, cfg.chunk_size);
    let snap = SsmState::zeros(&layout.dims);
    let loss = tr.loss_and_grad(&layout, &p, &snap, &[2], 0.12).unwrap();
    assert_eq!(loss, 0.0);
    assert!(tr.grads.iter().all(|&g| g == 0.0));
}
