use std::path::PathBuf;

use homjp::iph::iph_weights;
use homjp::model::{with_cap, IphModel, ModelSpec};
use homjp::qseq::QSequence;
use homjp::transition::transition_series;

fn load(name: &str) -> IphModel {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "models", name].iter().collect();
    let text = std::fs::read_to_string(p).unwrap();
    ModelSpec::from_json(&text).unwrap().to_model().unwrap()
}

#[test]
fn shipped_models_load() {
    for (name, p) in [("gompertz.json", 2), ("weibull.json", 2), ("loss_alae.json", 3), ("exponential.json", 1)] {
        assert_eq!(load(name).dim(), p, "{name}");
    }
}

// The mixture cdf at t is the absorbed mass alpha (I - P(0,t)) e, when the
// same Q sequence drives both.
#[test]
fn mixture_cdf_agrees_with_transition_matrix() {
    let n = 200.0;
    // the Weibull hazard outgrows any n unless capped
    let model = with_cap(&load("weibull.json"), n / 3.0).unwrap();
    let qs = QSequence::tilde(&model.sub, n).unwrap();
    let mix = iph_weights(&model.alpha, &qs, 4000, 1e-13).unwrap();
    for t in [0.25, 0.5, 1.0, 1.5] {
        let p = transition_series(&qs, 0.0, t, 1e-13).unwrap().matrix;
        let a = model.alpha.as_slice();
        let alive: f64 = (0..p.rows())
            .map(|i| a[i] * (0..p.cols()).map(|j| p[(i, j)]).sum::<f64>())
            .sum();
        let cdf = mix.cdf(t).unwrap();
        assert!((cdf - (1.0 - alive)).abs() < 1e-10, "t={t}: {cdf} vs {}", 1.0 - alive);
    }
}
