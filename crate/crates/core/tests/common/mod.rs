//! Independent reference implementations and the property suites shared by
//! the integration tests and the acceptance runner.
//!
//! Nothing here calls the library's forward pass, losses or selection code;
//! networks are read through their public weights only.

#![allow(dead_code)]

use num_rational::Ratio;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sagelab::active::{purity, ActiveEntry, ActiveSet};
use sagelab::losses::{
    cross_entropy, domain_adversarial_loss, transferability_loss, AdversarialTapes, BatchView,
};
use sagelab::model::Architecture;
use sagelab::nn::{Activation, DenseNet, GradientTape};
use sagelab::sage::{adversarial_gradient, diverse_sage_select, positive_projection, sage_distance, sage_embed, SageVector};
use sagelab::theory::check_naive_identity;
use sagelab::{Model, Net};

pub const CLAMP: f64 = 1e-12;

// ---------------------------------------------------------------- forward

fn act(a: Activation, v: &mut [f64]) {
    match a {
        Activation::Relu => v.iter_mut().for_each(|x| *x = if *x > 0.0 { *x } else { 0.0 }),
        Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        Activation::Sigmoid => v.iter_mut().for_each(|x| *x = 1.0 / (1.0 + (-*x).exp())),
        Activation::Identity => {}
        Activation::Softmax => {
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
            v.iter_mut().for_each(|x| *x = (*x - m).exp() / s);
        }
    }
}

/// Forward pass plus the sign pattern of every relu pre-activation.
pub fn forward_with_signs(net: &Net, x: &[f64], signs: &mut Vec<bool>) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in net.layers() {
        let (i, o) = (l.in_dim(), l.out_dim());
        let mut y = vec![0.0; o];
        for r in 0..o {
            let mut s = l.bias()[r];
            for c in 0..i {
                s += l.weights()[r * i + c] * h[c];
            }
            y[r] = s;
        }
        if l.activation() == Activation::Relu {
            signs.extend(y.iter().map(|&v| v > 0.0));
        }
        act(l.activation(), &mut y);
        h = y;
    }
    h
}

pub fn forward(net: &Net, x: &[f64]) -> Vec<f64> {
    forward_with_signs(net, x, &mut Vec::new())
}

fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP, 1.0 - CLAMP)
}

// ---------------------------------------------------------------- losses

pub fn ce(m: &Model, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let p = forward(&m.classifier, &forward(&m.features, x));
            -y.iter().zip(&p).map(|(a, b)| if *a == 0.0 { 0.0 } else { a * clamp(*b).ln() }).sum::<f64>()
        })
        .sum();
    total / xs.len() as f64
}

fn adv(features: &Net, disc: &Net, sx: &[Vec<f64>], sc: &[Vec<f64>], tx: &[Vec<f64>], tc: &[Vec<f64>]) -> f64 {
    let side = |xs: &[Vec<f64>], cs: &[Vec<f64>], target: bool| {
        xs.iter()
            .zip(cs)
            .map(|(x, c)| {
                let d = forward(disc, &forward(features, x));
                c.iter()
                    .zip(&d)
                    .map(|(ci, di)| if *ci == 0.0 { 0.0 } else if target { ci * clamp(*di).ln() } else { ci * clamp(1.0 - di).ln() })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / xs.len() as f64
    };
    side(sx, sc, false) + side(tx, tc, true)
}

/// `E_S[y·log(1 − 𝖽)] + E_T[ŷ·log 𝖽]`.
pub fn tsf(m: &Model, sx: &[Vec<f64>], sy: &[Vec<f64>], tx: &[Vec<f64>], ty: &[Vec<f64>]) -> f64 {
    adv(&m.features, &m.class_disc, sx, sy, tx, ty)
}

/// `E_S[log(1 − d)] + E_T[log d]`.
pub fn inv(m: &Model, sx: &[Vec<f64>], tx: &[Vec<f64>]) -> f64 {
    let ones = |n: usize| vec![vec![1.0]; n];
    adv(&m.features, &m.domain_disc, sx, &ones(sx.len()), tx, &ones(tx.len()))
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

// ---------------------------------------------------------------- random instances

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(r: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

pub fn simplex(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| -r.gen_range(1e-3..1.0f64).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn one_hot(k: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// Default-shaped model whose biases are randomized so relu units are not all
/// on the same side at initialization.
pub fn random_model(seed: u64, classes: usize) -> Model {
    let mut r = rng(seed);
    let arch = Architecture {
        classes,
        ..Architecture::default()
    };
    let mut m = Model::init(&arch, &mut r).unwrap();
    for net in [&mut m.features, &mut m.classifier, &mut m.class_disc, &mut m.domain_disc] {
        for l in net.layers_mut() {
            for b in l.bias_mut() {
                *b = r.gen_range(-0.2..0.2);
            }
        }
    }
    m
}

pub struct Batch {
    pub sx: Vec<Vec<f64>>,
    pub sy: Vec<Vec<f64>>,
    pub tx: Vec<Vec<f64>>,
    pub ty: Vec<Vec<f64>>,
}

pub fn random_batch(r: &mut impl Rng, dim: usize, classes: usize, n: usize) -> Batch {
    Batch {
        sx: (0..n).map(|_| normal_vec(r, dim, 1.5)).collect(),
        sy: (0..n).map(|_| one_hot(r.gen_range(0..classes), classes)).collect(),
        tx: (0..n).map(|_| normal_vec(r, dim, 1.5)).collect(),
        ty: (0..n).map(|_| simplex(r, classes)).collect(),
    }
}

// ---------------------------------------------------------------- finite differences

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Which {
    Features,
    Classifier,
    ClassDisc,
    DomainDisc,
}

pub fn net_mut(m: &mut Model, w: Which) -> &mut Net {
    match w {
        Which::Features => &mut m.features,
        Which::Classifier => &mut m.classifier,
        Which::ClassDisc => &mut m.class_disc,
        Which::DomainDisc => &mut m.domain_disc,
    }
}

pub fn net_ref(m: &Model, w: Which) -> &Net {
    match w {
        Which::Features => &m.features,
        Which::Classifier => &m.classifier,
        Which::ClassDisc => &m.class_disc,
        Which::DomainDisc => &m.domain_disc,
    }
}

/// Relu sign pattern of every network on every input of the batch.
pub fn signature(m: &Model, xs: &[&Vec<f64>]) -> Vec<bool> {
    let mut s = Vec::new();
    for x in xs {
        let z = forward_with_signs(&m.features, x, &mut s);
        forward_with_signs(&m.class_disc, &z, &mut s);
        forward_with_signs(&m.domain_disc, &z, &mut s);
    }
    s
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

pub fn vec_rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}

const FD_STEP: f64 = 1e-6;

/// Central difference of `loss` along `dir` in the parameters of one network.
/// Returns `None` when the two probes sit on different sides of a relu kink.
fn probe(m: &Model, w: Which, dir: &[f64], loss: &dyn Fn(&Model) -> f64, sig: &dyn Fn(&Model) -> Vec<bool>) -> Option<f64> {
    let theta = net_ref(m, w).params();
    let mut plus = m.clone();
    let mut minus = m.clone();
    let p: Vec<f64> = theta.iter().zip(dir).map(|(t, d)| t + FD_STEP * d).collect();
    let q: Vec<f64> = theta.iter().zip(dir).map(|(t, d)| t - FD_STEP * d).collect();
    net_mut(&mut plus, w).set_params(&p).unwrap();
    net_mut(&mut minus, w).set_params(&q).unwrap();
    let base = sig(m);
    if sig(&plus) != base || sig(&minus) != base {
        return None;
    }
    Some((loss(&plus) - loss(&minus)) / (2.0 * FD_STEP))
}

/// Worst relative error between `analytic` (gradient w.r.t. the parameters of
/// net `w`) and finite differences: random directions plus a coordinate subset.
pub fn check_param_grad(
    m: &Model,
    w: Which,
    analytic: &[f64],
    loss: &dyn Fn(&Model) -> f64,
    sig: &dyn Fn(&Model) -> Vec<bool>,
    r: &mut impl Rng,
) -> f64 {
    let n = analytic.len();
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut tries = 0;
    while done < 3 && tries < 30 {
        tries += 1;
        let mut dir = normal_vec(r, n, 1.0);
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        if let Some(num) = probe(m, w, &dir, loss, sig) {
            let a: f64 = analytic.iter().zip(&dir).map(|(g, d)| g * d).sum();
            worst = worst.max(rel_err(a, num));
            done += 1;
        }
    }
    assert!(done > 0, "every probe crossed a relu kink");
    let coords: Vec<usize> = if n <= 48 { (0..n).collect() } else { rand::seq::index::sample(r, n, 48).into_vec() };
    let mut an = Vec::new();
    let mut nu = Vec::new();
    for &i in &coords {
        let mut dir = vec![0.0; n];
        dir[i] = 1.0;
        if let Some(v) = probe(m, w, &dir, loss, sig) {
            an.push(analytic[i]);
            nu.push(v);
        }
    }
    worst.max(vec_rel_err(&an, &nu))
}

/// Gradient of each loss against finite differences for one seed; returns the
/// worst relative error seen per check.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let classes = 2 + (seed % 3) as usize;
    let m = random_model(seed.wrapping_mul(7919), classes);
    let b = random_batch(&mut r, 2, classes, 3);
    let all_x: Vec<&Vec<f64>> = b.sx.iter().chain(&b.tx).collect();
    let sig = |mm: &Model| signature(mm, &all_x);
    let lambda = r.gen_range(0.1..1.0);
    let mut out = Vec::new();

    // plain backward of u·net(x) on each network, params and input
    for (name, w) in [
        ("backward/features", Which::Features),
        ("backward/classifier", Which::Classifier),
        ("backward/class_disc", Which::ClassDisc),
        ("backward/domain_disc", Which::DomainDisc),
    ] {
        let net = net_ref(&m, w);
        let x = normal_vec(&mut r, net.input_dim(), 1.0);
        let u = normal_vec(&mut r, net.output_dim(), 1.0);
        let mut tape = GradientTape::for_net(net);
        let trace = net.forward_traced(&x).unwrap();
        let dx = net.backward(&trace, &u, &mut tape).unwrap();
        let f = |mm: &Model| forward(net_ref(mm, w), &x).iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        let s = |mm: &Model| {
            let mut v = Vec::new();
            forward_with_signs(net_ref(mm, w), &x, &mut v);
            v
        };
        let e = check_param_grad(&m, w, &tape.flatten(), &f, &s, &mut r);
        // input gradient
        let mut an = Vec::new();
        let mut nu = Vec::new();
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += FD_STEP;
            xm[i] -= FD_STEP;
            let (mut sp, mut sm, mut s0) = (Vec::new(), Vec::new(), Vec::new());
            let fp: f64 = forward_with_signs(net, &xp, &mut sp).iter().zip(&u).map(|(a, b)| a * b).sum();
            let fm: f64 = forward_with_signs(net, &xm, &mut sm).iter().zip(&u).map(|(a, b)| a * b).sum();
            forward_with_signs(net, &x, &mut s0);
            if sp == s0 && sm == s0 {
                an.push(dx[i]);
                nu.push((fp - fm) / (2.0 * FD_STEP));
            }
        }
        out.push((name, e.max(vec_rel_err(&an, &nu))));
    }

    // source cross-entropy
    {
        let mut tf = GradientTape::for_net(&m.features);
        let mut tc = GradientTape::for_net(&m.classifier);
        cross_entropy(&m.features, &m.classifier, &b.sx, &b.sy, Some((&mut tf, &mut tc))).unwrap();
        let f = |mm: &Model| ce(mm, &b.sx, &b.sy);
        let e1 = check_param_grad(&m, Which::Features, &tf.flatten(), &f, &sig, &mut r);
        let e2 = check_param_grad(&m, Which::Classifier, &tc.flatten(), &f, &sig, &mut r);
        out.push(("cross_entropy", e1.max(e2)));
    }

    // transferability loss: discriminator receives −∇L, features λ∇L
    {
        let view = BatchView::new(&b.sx, &b.sy, &b.tx, &b.ty, classes).unwrap();
        let mut tf = GradientTape::for_net(&m.features);
        let mut td = GradientTape::for_net(&m.class_disc);
        transferability_loss(
            &m.features,
            &m.class_disc,
            &view,
            Some(AdversarialTapes {
                features: &mut tf,
                disc: &mut td,
                lambda,
            }),
        )
        .unwrap();
        let f = |mm: &Model| tsf(mm, &b.sx, &b.sy, &b.tx, &b.ty);
        let neg: Vec<f64> = td.flatten().iter().map(|g| -g).collect();
        let e1 = check_param_grad(&m, Which::ClassDisc, &neg, &f, &sig, &mut r);
        let scaled: Vec<f64> = tf.flatten().iter().map(|g| g / lambda).collect();
        let e2 = check_param_grad(&m, Which::Features, &scaled, &f, &sig, &mut r);
        out.push(("transferability", e1.max(e2)));
    }

    // binary domain-adversarial loss, same convention
    {
        let mut tf = GradientTape::for_net(&m.features);
        let mut td = GradientTape::for_net(&m.domain_disc);
        domain_adversarial_loss(
            &m.features,
            &m.domain_disc,
            &b.sx,
            &b.tx,
            Some(AdversarialTapes {
                features: &mut tf,
                disc: &mut td,
                lambda,
            }),
        )
        .unwrap();
        let f = |mm: &Model| inv(mm, &b.sx, &b.tx);
        let neg: Vec<f64> = td.flatten().iter().map(|g| -g).collect();
        let e1 = check_param_grad(&m, Which::DomainDisc, &neg, &f, &sig, &mut r);
        let scaled: Vec<f64> = tf.flatten().iter().map(|g| g / lambda).collect();
        let e2 = check_param_grad(&m, Which::Features, &scaled, &f, &sig, &mut r);
        out.push(("domain_adversarial", e1.max(e2)));
    }

    // adversarial gradient rows: −∂ log 𝖽_i / ∂z
    {
        let x = &b.tx[0];
        let g = adversarial_gradient(&m.features, &m.classifier, &m.class_disc, x).unwrap();
        let z = forward(&m.features, x);
        let mut worst: f64 = 0.0;
        for (i, row) in g.rows.iter().enumerate() {
            let mut an = Vec::new();
            let mut nu = Vec::new();
            for k in 0..z.len() {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += FD_STEP;
                zm[k] -= FD_STEP;
                let (mut s0, mut sp, mut sm) = (Vec::new(), Vec::new(), Vec::new());
                forward_with_signs(&m.class_disc, &z, &mut s0);
                let dp = forward_with_signs(&m.class_disc, &zp, &mut sp)[i];
                let dm = forward_with_signs(&m.class_disc, &zm, &mut sm)[i];
                if sp == s0 && sm == s0 {
                    an.push(row[k]);
                    nu.push(-(dp.ln() - dm.ln()) / (2.0 * FD_STEP));
                }
            }
            worst = worst.max(vec_rel_err(&an, &nu));
        }
        let p = forward(&m.classifier, &z);
        let perr = p.iter().zip(&g.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        out.push(("adversarial_gradient", worst.max(perr)));
    }

    // annotated loss L_A through one unit-rate inductive step on the head
    {
        use sagelab::active::{annotated_loss, inductive_step, ActiveClassifier};
        let pool: Vec<Vec<f64>> = b.tx.clone();
        let mut set = ActiveSet::new(pool.len(), classes);
        for (i, _) in pool.iter().enumerate().take(2) {
            set.push(ActiveEntry {
                pool_index: i,
                label: r.gen_range(0..classes),
                round: 1,
                pre_prediction: 0,
            })
            .unwrap();
        }
        let mut active = ActiveClassifier::inductive_from(&m.classifier);
        let before = m.classifier.params();
        inductive_step(&mut active, &m.features, &set, &pool, 1.0).unwrap();
        let after = active.head().unwrap().params();
        let grad: Vec<f64> = before.iter().zip(&after).map(|(a, b)| a - b).collect();
        let f = |mm: &Model| annotated_loss(&mm.classifier, &mm.features, &set, &pool).unwrap();
        // oracle cross-check of the loss value itself
        let direct: f64 = set
            .entries()
            .iter()
            .map(|e| -clamp(forward(&m.classifier, &forward(&m.features, &pool[e.pool_index]))[e.label]).ln())
            .sum::<f64>()
            / set.len() as f64;
        let verr = rel_err(f(&m), direct);
        let e = check_param_grad(&m, Which::Classifier, &grad, &f, &sig, &mut r);
        out.push(("annotated_loss", e.max(verr)));
    }
    out
}

// ---------------------------------------------------------------- projection / embedding

/// Brute-force greedy farthest-first: recompute every min-distance from
/// scratch at each step; first pick by norm; ties to the lowest index.
pub fn brute_force_select(pool: &[Vec<f64>], budget: usize) -> Vec<usize> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut picks: Vec<usize> = Vec::new();
    if budget == 0 {
        return picks;
    }
    let mut best = 0;
    for i in 0..pool.len() {
        if norm(&pool[i]) > norm(&pool[best]) {
            best = i;
        }
    }
    picks.push(best);
    while picks.len() < budget {
        let mut cand: Option<(usize, f64)> = None;
        for i in 0..pool.len() {
            if picks.contains(&i) {
                continue;
            }
            let d = picks.iter().map(|&j| dist(&pool[i], &pool[j])).fold(f64::INFINITY, f64::min);
            match cand {
                Some((_, bd)) if d <= bd => {}
                _ => cand = Some((i, d)),
            }
        }
        picks.push(cand.unwrap().0);
    }
    picks
}

/// Random embedding set; some draws contain duplicated vectors and equal
/// norms so that the tie-break is exercised.
pub fn random_embeddings(r: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut v: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(r, dim, 1.0)).collect();
    if n > 2 && r.gen_bool(0.3) {
        let a = r.gen_range(0..n);
        let b = r.gen_range(0..n);
        v[b] = v[a].clone();
    }
    if n > 2 && r.gen_bool(0.2) {
        // integer grid: many exact distance ties
        v = (0..n).map(|_| (0..dim).map(|_| r.gen_range(-2..=2) as f64).collect()).collect();
    }
    v
}

/// Greedy selection agreement with brute force on `sets` random pools of size ≤ 8 and all budgets ≤ 4.
/// Returns the number of disagreements.
pub fn greedy_selection_suite(sets: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..sets {
        let n = r.gen_range(1..=8);
        let dim = r.gen_range(1..=4);
        let pool = random_embeddings(&mut r, n, dim);
        let emb: Vec<SageVector<f64>> = pool.iter().cloned().map(SageVector::from_vec).collect();
        for budget in 0..=n.min(4) {
            if diverse_sage_select(&emb, budget).unwrap() != brute_force_select(&pool, budget) {
                bad += 1;
            }
        }
    }
    bad
}

pub struct ProjectionStats {
    pub agreement_worst: f64,
    pub opposition_worst: f64,
    pub orthogonal_worst: f64,
    pub sign_identity_worst: f64,
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nrm(a: &[f64]) -> f64 {
    dotp(a, a).sqrt()
}

/// Builds rows whose probability-weighted mean is exactly `e`, with row 0
/// prescribed and the remaining rows absorbing the difference.
fn rows_with_mean(r: &mut impl Rng, e: &[f64], first: Vec<f64>, probs: &[f64]) -> Vec<Vec<f64>> {
    let c = probs.len();
    let mut rows = vec![first];
    for _ in 1..c - 1 {
        rows.push(normal_vec(r, e.len(), 1.0));
    }
    let partial: Vec<f64> = (0..e.len())
        .map(|k| rows.iter().zip(probs).map(|(row, p)| p * row[k]).sum::<f64>())
        .collect();
    let last: Vec<f64> = e.iter().zip(&partial).map(|(ek, s)| (ek - s) / probs[c - 1]).collect();
    rows.push(last);
    rows
}

/// Constructed agreement / opposition / orthogonal cases plus the sign identity
/// `G̃_i·E = G_i·E − |G_i·E|` on `random` instances.
pub fn projection_suite(random: usize, seed: u64) -> ProjectionStats {
    let mut r = rng(seed);
    let mut s = ProjectionStats {
        agreement_worst: 0.0,
        opposition_worst: 0.0,
        orthogonal_worst: 0.0,
        sign_identity_worst: 0.0,
    };
    for _ in 0..500 {
        let d = r.gen_range(2..6);
        let c = r.gen_range(2..5);
        let probs = simplex(&mut r, c);
        let e = normal_vec(&mut r, d, 1.0);
        let en = nrm(&e);
        // agreement: G_0 = a·E
        let a = r.gen_range(0.1..3.0);
        let rows = rows_with_mean(&mut r, &e, e.iter().map(|v| a * v).collect(), &probs);
        let p = positive_projection(&rows, &probs).unwrap();
        s.agreement_worst = s.agreement_worst.max(nrm(&p[0]) / en);
        // opposition: G_0 = −E
        let rows = rows_with_mean(&mut r, &e, e.iter().map(|v| -v).collect(), &probs);
        let p = positive_projection(&rows, &probs).unwrap();
        s.opposition_worst = s.opposition_worst.max((nrm(&p[0]) / nrm(&rows[0]) - 2.0).abs() / 2.0);
        let doubled: Vec<f64> = e.iter().map(|v| -2.0 * v).collect();
        s.opposition_worst = s.opposition_worst.max(vec_rel_err(&p[0], &doubled));
        // orthogonal: G_0 ⟂ E
        let mut o = normal_vec(&mut r, d, 1.0);
        let k = dotp(&o, &e) / (en * en);
        o.iter_mut().zip(&e).for_each(|(x, y)| *x -= k * y);
        let rows = rows_with_mean(&mut r, &e, o.clone(), &probs);
        let p = positive_projection(&rows, &probs).unwrap();
        s.orthogonal_worst = s.orthogonal_worst.max(vec_rel_err(&p[0], &o));
    }
    for _ in 0..random {
        let d = r.gen_range(1..8);
        let c = r.gen_range(1..6);
        let rows: Vec<Vec<f64>> = (0..c).map(|_| normal_vec(&mut r, d, 1.0)).collect();
        let probs = simplex(&mut r, c);
        let e: Vec<f64> = (0..d).map(|k| rows.iter().zip(&probs).map(|(row, p)| p * row[k]).sum()).collect();
        if nrm(&e) < 1e-12 {
            continue;
        }
        let p = positive_projection(&rows, &probs).unwrap();
        for (g, gt) in rows.iter().zip(&p) {
            let lhs = dotp(gt, &e);
            let rhs = dotp(g, &e) - dotp(g, &e).abs();
            let scale = nrm(g) * nrm(&e);
            s.sign_identity_worst = s.sign_identity_worst.max((lhs - rhs).abs() / scale.max(1e-300));
        }
    }
    s
}

pub struct EmbeddingStats {
    pub norm_identity_worst: f64,
    pub metric_violations: usize,
}

/// `‖SAGE(x)‖² = Σ h_i ‖G̃_i‖²` and the metric axioms of the embedding
/// distance on `triples` random triples.
pub fn embedding_suite(triples: usize, seed: u64) -> EmbeddingStats {
    let mut r = rng(seed);
    let mut s = EmbeddingStats {
        norm_identity_worst: 0.0,
        metric_violations: 0,
    };
    let mut embed = |r: &mut ChaCha8Rng, c: usize, d: usize| {
        let rows: Vec<Vec<f64>> = (0..c).map(|_| normal_vec(r, d, 1.0)).collect();
        let probs = simplex(r, c);
        let p = positive_projection(&rows, &probs).unwrap();
        let v = sage_embed(&p, &probs).unwrap();
        let expected: f64 = p.iter().zip(&probs).map(|(g, h)| h * dotp(g, g)).sum();
        let got = v.norm().powi(2);
        s.norm_identity_worst = s.norm_identity_worst.max((got - expected).abs() / expected.max(1e-300));
        v
    };
    for _ in 0..triples {
        let c = r.gen_range(1..5);
        let d = r.gen_range(1..6);
        let a = embed(&mut r, c, d);
        let b = if r.gen_bool(0.05) { a.clone() } else { embed(&mut r, c, d) };
        let cc = embed(&mut r, c, d);
        let dab = sage_distance(&a, &b).unwrap();
        let dba = sage_distance(&b, &a).unwrap();
        let dac = sage_distance(&a, &cc).unwrap();
        let dbc = sage_distance(&b, &cc).unwrap();
        let daa = sage_distance(&a, &a).unwrap();
        let identical = a.as_slice() == b.as_slice();
        let ok = daa == 0.0
            && dab >= 0.0
            && dab == dba
            && (dab == 0.0) == identical
            && dac <= dab + dbc + 1e-12 * (dab + dbc).max(1.0);
        s.metric_violations += usize::from(!ok);
    }
    s
}

// ---------------------------------------------------------------- naive-error identity

/// Random (classifier, subset) instances of the naive-classifier identity.
/// Returns the number of failures.
pub fn naive_identity_suite(instances: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut failures = 0;
    for k in 0..instances {
        let n = r.gen_range(5..60);
        let classes = r.gen_range(2..5);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..classes)).collect();
        // alternate random networks and random prediction tables
        let preds: Vec<Vec<f64>> = if k % 2 == 0 {
            let net = DenseNet::<f64>::mlp(&[3, 8, classes], Activation::Tanh, Activation::Softmax, &mut r).unwrap();
            (0..n).map(|_| forward(&net, &normal_vec(&mut r, 3, 2.0))).collect()
        } else {
            (0..n).map(|_| simplex(&mut r, classes)).collect()
        };
        let hard = |p: &[f64]| {
            let mut best = 0;
            for i in 1..p.len() {
                if p[i] > p[best] {
                    best = i;
                }
            }
            best
        };
        let size = r.gen_range(0..=n);
        let subset = rand::seq::index::sample(&mut r, n, size).into_vec();
        let mut set = ActiveSet::new(n, classes);
        for &i in &subset {
            set.push(ActiveEntry {
                pool_index: i,
                label: labels[i],
                round: 1,
                pre_prediction: hard(&preds[i]),
            })
            .unwrap();
        }
        // independent count
        let err_h = (0..n).filter(|&i| hard(&preds[i]) != labels[i]).count() as i64;
        let err_naive = (0..n)
            .filter(|&i| {
                let p = if subset.contains(&i) { labels[i] } else { hard(&preds[i]) };
                p != labels[i]
            })
            .count() as i64;
        let b = Ratio::new(size as i64, n as i64);
        let pi = if size == 0 {
            Ratio::from_integer(0)
        } else {
            let wrong = subset.iter().filter(|&&i| hard(&preds[i]) != labels[i]).count() as i64;
            let p = purity(&set).unwrap();
            if (p - wrong as f64 / size as f64).abs() > 1e-15 {
                failures += 1;
                continue;
            }
            Ratio::new(wrong, size as i64)
        };
        let lhs = Ratio::new(err_naive, n as i64);
        let rhs = Ratio::new(err_h, n as i64) - b * pi;
        let report = check_naive_identity(&preds, &set, &labels).unwrap();
        let ok = lhs == rhs && report.holds && report.error_naive == lhs && report.error_h == Ratio::new(err_h, n as i64);
        failures += usize::from(!ok);
    }
    failures
}
