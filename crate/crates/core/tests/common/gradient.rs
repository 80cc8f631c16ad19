//! Analytic gradients against central finite differences.

use explore_bonus::neural::{softmax_cross_entropy, squared_error, Architecture, HeadQuery, SequenceNet};
use explore_bonus::rng;
use rand::Rng;

pub const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
pub const KINK_MARGIN: f64 = 1e-2;

pub struct Problem {
    pub inputs: Vec<Vec<f64>>,
    pub queries: Vec<HeadQuery>,
    /// Class targets (classifier) or regression targets (scalar head), one per query.
    pub targets: Vec<f64>,
    pub classifier: bool,
}

pub fn loss_and_dout(outputs: &[Vec<f64>], p: &Problem) -> (f64, Vec<Vec<f64>>) {
    let mut loss = 0.0;
    let mut d = Vec::new();
    for (out, &target) in outputs.iter().zip(&p.targets) {
        if p.classifier {
            let (l, g) = softmax_cross_entropy(out, target as usize);
            loss += l;
            d.push(g);
        } else {
            let (l, g) = squared_error(out[0], target);
            loss += l;
            d.push(vec![g]);
        }
    }
    (loss, d)
}

fn loss_only(net: &mut SequenceNet, p: &Problem) -> f64 {
    let out = net.forward(&p.inputs, &p.queries).unwrap();
    loss_and_dout(&out, p).0
}

/// Smallest |pre-activation| of the rectifier over every query.
fn kink_margin(net: &SequenceNet, p: &Problem) -> f64 {
    let hs = net.forward_recurrent(&p.inputs).unwrap();
    p.queries
        .iter()
        .flat_map(|q| net.hidden_preactivation(&hs[q.step], &q.aux).unwrap())
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

/// Draws problems for `seed` until no rectifier input sits within `KINK_MARGIN`
/// of zero, where a finite-difference step could cross the kink.
pub fn problem(seed: u64, classifier: bool) -> (SequenceNet, Problem) {
    (0..)
        .map(|attempt| draw_problem(seed, classifier, attempt))
        .find(|(net, p)| kink_margin(net, p) >= KINK_MARGIN)
        .unwrap()
}

fn draw_problem(seed: u64, classifier: bool, attempt: u64) -> (SequenceNet, Problem) {
    let mut r = rng::stream(seed, "gradcheck", u64::from(classifier) + 2 * attempt);
    let arch = Architecture {
        input: 6,
        recurrent: 4,
        hidden: 8,
        aux: if classifier { 0 } else { 3 },
        output: if classifier { 5 } else { 1 },
    };
    let net = SequenceNet::new(arch, &mut r).unwrap();
    let steps = 5;
    // Binary-ish inputs with a few real values, like rendered frames plus noise.
    let inputs: Vec<Vec<f64>> = (0..steps)
        .map(|_| {
            (0..arch.input)
                .map(|_| if r.gen_bool(0.4) { 0.0 } else { r.gen_range(-1.0..1.0) })
                .collect()
        })
        .collect();
    let mut queries = Vec::new();
    let mut targets = Vec::new();
    for step in 0..steps {
        let per_step = if classifier { 1 } else { 2 };
        for _ in 0..per_step {
            let aux = (0..arch.aux).map(|_| r.gen_range(-1.0..1.0)).collect();
            queries.push(HeadQuery { step, aux });
            targets.push(if classifier {
                r.gen_range(0..arch.output) as f64
            } else {
                r.gen_range(-2.0..2.0)
            });
        }
    }
    (
        net,
        Problem {
            inputs,
            queries,
            targets,
            classifier,
        },
    )
}

/// Worst per-array relative error `|g - fd| / (|g| + |fd|)` over all parameter arrays.
#[allow(clippy::needless_range_loop)]
pub fn worst_relative_error(seed: u64, classifier: bool) -> (f64, String) {
    let (mut net, p) = problem(seed, classifier);
    net.zero_grad();
    let out = net.forward(&p.inputs, &p.queries).unwrap();
    let (_, dout) = loss_and_dout(&out, &p);
    net.backward(&dout).unwrap();
    let analytic: Vec<Vec<f64>> = net.store.params().iter().map(|q| q.grad.clone()).collect();

    let mut worst = (0.0, String::new());
    for pi in 0..analytic.len() {
        let len = analytic[pi].len();
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut f2 = 0.0;
        for k in 0..len {
            let orig = net.store.params()[pi].value[k];
            net.store.params_mut()[pi].value[k] = orig + EPS;
            let plus = loss_only(&mut net, &p);
            net.store.params_mut()[pi].value[k] = orig - EPS;
            let minus = loss_only(&mut net, &p);
            net.store.params_mut()[pi].value[k] = orig;
            let fd = (plus - minus) / (2.0 * EPS);
            let g = analytic[pi][k];
            diff2 += (g - fd) * (g - fd);
            a2 += g * g;
            f2 += fd * fd;
        }
        let denom = a2.sqrt() + f2.sqrt();
        let rel = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
        if rel > worst.0 {
            worst = (rel, net.store.params()[pi].name.clone());
        }
    }
    worst
}
