mod common;


use common::{mini_config, mini_examples, mini_taxonomy, mini_vocab};
use patclass::text::{embed_words, time_major};
use patclass::{Example, IclMode, Model, ModelConfig};
use patclass_tensor::gradcheck::check_params;
use patclass_tensor::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-3;

fn model(cfg: ModelConfig) -> (Model, ParamStore<f64>) {
    Model::new::<f64>(cfg, mini_taxonomy(), mini_vocab()).unwrap()
}

/// First initialisation seed at which no relu input lies within `MARGIN`
/// of its kink, so central differences see a differentiable function.
fn smooth_model<F>(cfg: ModelConfig, forward: F) -> (Model, ParamStore<f64>)
where
    F: Fn(&Model, &Graph<f64>, &ParamStore<f64>) -> patclass::Result<Var>,
{
    const MARGIN: f64 = 3e-3;
    for seed in 0..5000 {
        let (m, store) = model(ModelConfig { seed, ..cfg.clone() });
        let g = Graph::new();
        forward(&m, &g, &store).unwrap();
        if g.relu_margin().is_none_or(|x| x > MARGIN) {
            return (m, store);
        }
    }
    panic!("no kink-free initialisation found");
}

/// `sum(x * C)` for a fixed random `C`.
fn project(g: &Graph<f64>, x: Var, seed: u64) -> Var {
    let shape = g.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = Tensor::new(shape.clone(), (0..shape[0] * shape[1]).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let y = g.mul(x, g.constant(c)).unwrap();
    g.sum(y)
}

fn assert_close(label: &str, report: patclass_tensor::gradcheck::GradReport) {
    assert!(
        report.max_rel_error <= TOL,
        "{label}: rel error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
        report.max_rel_error,
        report.worst_param,
        report.worst_index,
        report.analytic,
        report.numeric
    );
}

#[test]
fn text_encoder_gradients() {
    let (m, store) = model(mini_config());
    let seqs: [&[usize]; 2] = [&[2, 3, 4], &[5, 0, 7, 8, 9]];
    let report = check_params(&store, H, FLOOR, |g, s| -> patclass::Result<Var> {
        let x = embed_words(g, s, m.word_emb, &time_major(&seqs, 5))?;
        let v = m.lstm.encode_batch(g, s, x, &[3, 5])?;
        Ok(project(g, v, 1))
    })
    .unwrap();
    assert!(report.checked > 0);
    assert_close("text", report);
}

#[test]
fn icl_gradients_every_mode() {
    for mode in [IclMode::Fixed, IclMode::AdaptiveH, IclMode::AdaptiveV, IclMode::AdaptiveHv] {
        for level in 1..=3 {
            let cfg = ModelConfig {
                icl_mode: mode,
                level,
                ..mini_config()
            };
            let forward = |m: &Model, g: &Graph<f64>, s: &ParamStore<f64>| -> patclass::Result<Var> {
                Ok(project(g, m.code_queries(g, s)?, 2))
            };
            let (m, store) = smooth_model(cfg, forward);
            let report = check_params(&store, H, FLOOR, |g, s| forward(&m, g, s)).unwrap();
            assert_close(&format!("icl {mode} level {level}"), report);
        }
    }
}

#[test]
fn history_gradients() {
    let ex = mini_examples(4, 8, 3);
    let hs: Vec<_> = ex.iter().map(|e| e.history.clone()).collect();
    for (pe, text, label) in [(true, true, true), (false, true, true), (true, false, true), (true, true, false)] {
        let cfg = ModelConfig {
            use_pe: pe,
            use_text: text,
            use_label: label,
            ..mini_config()
        };
        let forward = |m: &Model, g: &Graph<f64>, s: &ParamStore<f64>| -> patclass::Result<Var> {
            let h = m.history.as_ref().expect("history enabled");
            Ok(project(g, h.embed_batch(g, s, m.word_emb, &hs)?, 4))
        };
        let (m, store) = smooth_model(cfg, forward);
        let report = check_params(&store, H, FLOOR, |g, s| forward(&m, g, s)).unwrap();
        assert_close(&format!("history pe={pe} text={text} label={label}"), report);
    }
}

#[test]
fn full_model_loss_gradients() {
    let ex = mini_examples(3, 8, 5);
    let batch: Vec<&Example> = ex.iter().collect();
    for cfg in [
        mini_config(),
        mini_config().pse(),
        ModelConfig {
            icl_mode: IclMode::Fixed,
            reduction: patclass::LossReduction::Mean,
            ..mini_config()
        },
        ModelConfig {
            sibling_self: false,
            reverse_edges: true,
            ..mini_config()
        },
    ] {
        let forward = |m: &Model, g: &Graph<f64>, s: &ParamStore<f64>| m.loss(g, s, &batch);
        let (m, store) = smooth_model(cfg, forward);
        let report = check_params(&store, H, FLOOR, |g, s| forward(&m, g, s)).unwrap();
        assert_close("full model", report);
    }
}

#[test]
fn embedding_gradient_reaches_only_used_rows() {
    let (m, store) = model(mini_config());
    let g = Graph::new();
    let x = embed_words(&g, &store, m.word_emb, &[3, 3, 5, 1]).unwrap();
    let loss = g.sum(x);
    let grads = g.backward(loss).unwrap();
    let mut s = store.clone();
    grads.accumulate_into(&mut s);
    let grad = s.get(m.word_emb).grad.clone().unwrap();
    for r in 0..grad.rows() {
        let expected = match r {
            3 => 2.0,
            5 => 1.0,
            _ => 0.0,
        };
        assert!(grad.row_slice(r).iter().all(|&v| v == expected), "row {r}");
    }
}
