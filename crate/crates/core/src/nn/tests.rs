use super::*;
use crate::complex::{build_complex, delaunay_complex, random_points, HoleDisk};
use crate::spectral::{eig_sym, matrix_exp_oracle, TruncatedSpectrum};
use rand::Rng;
use rand_distr::StandardNormal;

fn randn<R: Rng>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn small_complex(seed: u64) -> SimplicialComplex {
    let p = random_points(10, seed).unwrap();
    delaunay_complex(&p, &[HoleDisk { center: [0.5, 0.5], radius: 0.2 }]).unwrap()
}

fn identity_params(f: usize) -> CosimoParams {
    let i = DMatrix::identity(f, f);
    CosimoParams {
        theta_d: i.clone(),
        theta_u: i.clone(),
        psi_d: i.clone(),
        psi_u: i,
        tau_d: 0.0,
        tau_u: 0.0,
        activation: Activation::Identity,
    }
}

#[test]
fn projections() {
    let c = build_complex(&[], &[[0, 1, 2]]).unwrap();
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let ones = Cochain::new(0, DMatrix::from_element(3, 1, 1.0));
    let x1 = Cochain::zeros(1, 3, 1);
    let t = project(&ctx, Some(&ones), &x1, None).unwrap();
    assert_eq!(t.lower_proj, DMatrix::zeros(3, 1));
    assert_eq!(t.upper_proj, DMatrix::zeros(3, 1));

    // Node indicator on vertex 1 picks row 1 of B1: edges (0,1), (0,2), (1,2).
    let e1 = Cochain::new(0, DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]));
    let t = project(&ctx, Some(&e1), &x1, None).unwrap();
    assert_eq!(t.lower_proj.as_slice(), &[1.0, 0.0, -1.0]);

    let hollow = build_complex(&[[0, 1], [1, 2], [0, 2]], &[]).unwrap();
    let hctx = ComplexContext::from_complex(&hollow).unwrap();
    let empty = Cochain::zeros(2, 0, 1);
    let t = project(&hctx, None, &x1, Some(&empty)).unwrap();
    assert_eq!(t.upper_proj, DMatrix::zeros(3, 1));

    let bad = Cochain::zeros(0, 4, 1);
    assert!(matches!(project(&ctx, Some(&bad), &x1, None), Err(Error::Shape(_))));
}

#[test]
fn polynomial_filter_cases() {
    let c = small_complex(1);
    let ops = c_ops(&c, 1);
    let mut rng = crate::rng::from_seed(2);
    let x = DVector::from_fn(ops.size(), |_, _| rng.sample(StandardNormal));
    assert_eq!(simplicial_filter(&x, &[1.0], &[0.0], &ops).unwrap(), x);
    let y = simplicial_filter(&x, &[0.0, 1.0], &[0.0, 0.0], &ops).unwrap();
    assert!((y - ops.down().unwrap() * &x).amax() < 1e-12);

    // Level 0 reduces to a graph filter in the graph Laplacian B1 B1^T.
    let ops0 = c_ops(&c, 0);
    let x0 = DVector::from_fn(ops0.size(), |_, _| rng.sample(StandardNormal));
    let betas = [0.5, -0.2, 0.03];
    let l = ops0.full();
    let want = &x0 * 0.5 + (l * &x0) * -0.2 + (l * (l * &x0)) * 0.03;
    let got = simplicial_filter(&x0, &[7.0], &betas, &ops0).unwrap() - &x0 * 7.0;
    assert!((got - want).amax() < 1e-12);
}

fn c_ops(c: &SimplicialComplex, k: usize) -> HodgeOperators {
    crate::complex::hodge_operators(c, k).unwrap()
}

#[test]
fn discrete_layer_cases() {
    let c = small_complex(3);
    let ctx = ComplexContext::dense(BoundaryMaps::from_complex(&c)).unwrap();
    let mut rng = crate::rng::from_seed(4);
    let n = ctx.size(1);
    let triple = CochainTriple {
        own: Cochain::new(1, randn(n, 2, &mut rng)),
        lower_proj: randn(n, 2, &mut rng),
        upper_proj: randn(n, 2, &mut rng),
    };
    let zero = DiscreteParams::zeros(1, 1, 2, 2, Activation::Relu);
    assert_eq!(discrete_layer(&triple, &zero, ctx.ops(1)).unwrap().values, DMatrix::zeros(n, 2));

    let mut id = DiscreteParams::zeros(0, 0, 2, 2, Activation::Identity);
    for w in [&mut id.theta_d[0], &mut id.psi_d[0], &mut id.psi_u[0], &mut id.theta_u[0]] {
        *w = DMatrix::identity(2, 2);
    }
    let y = discrete_layer(&triple, &id, ctx.ops(1)).unwrap().values;
    let want = &triple.lower_proj + &triple.own.values * 2.0 + &triple.upper_proj;
    assert!((y - want).amax() < 1e-12);
}

#[test]
fn cosimo_layer_at_zero_time_and_against_oracle() {
    let c = small_complex(5);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(6);
    let n = ctx.size(1);
    let triple = CochainTriple {
        own: Cochain::new(1, randn(n, 3, &mut rng)),
        lower_proj: randn(n, 3, &mut rng),
        upper_proj: randn(n, 3, &mut rng),
    };
    let p = identity_params(3).with_times(0.0, 0.0);
    let y = cosimo_layer(&triple, &p, Some(ctx.spectra(1).unwrap())).unwrap().values;
    let want = &triple.lower_proj + &triple.upper_proj + &triple.own.values * 2.0;
    assert!((y - want).amax() < 1e-10);

    let p = CosimoParams::init(3, 2, 0.7, Activation::Identity, &mut rng).with_times(0.4, 1.3);
    let y = cosimo_layer(&triple, &p, Some(ctx.spectra(1).unwrap())).unwrap().values;
    let ed = matrix_exp_oracle(ctx.ops(1).down().unwrap(), 0.4).unwrap();
    let eu = matrix_exp_oracle(ctx.ops(1).up(), 1.3).unwrap();
    let want = &ed * &triple.lower_proj * &p.theta_d
        + &eu * &triple.upper_proj * &p.theta_u
        + &ed * &triple.own.values * &p.psi_d
        + &eu * &triple.own.values * &p.psi_u;
    assert!((y - want).amax() < 1e-8);

    assert!(matches!(cosimo_layer(&triple, &p, None), Err(Error::MissingSpectra(1))));
}

#[test]
fn full_k_ignores_truncation_policy() {
    let c = small_complex(7);
    let maps = BoundaryMaps::from_complex(&c);
    let lo = ComplexContext::with_spectra(maps.clone(), &Truncation::default()).unwrap();
    let hi = ComplexContext::with_spectra(
        maps,
        &Truncation { policy: TruncationPolicy::HighFrequency, ..Truncation::default() },
    )
    .unwrap();
    let mut rng = crate::rng::from_seed(8);
    let n = lo.size(1);
    let triple = CochainTriple {
        own: Cochain::new(1, randn(n, 2, &mut rng)),
        lower_proj: randn(n, 2, &mut rng),
        upper_proj: randn(n, 2, &mut rng),
    };
    let p = CosimoParams::init(2, 2, 0.5, Activation::Relu, &mut rng);
    let a = cosimo_layer(&triple, &p, Some(lo.spectra(1).unwrap())).unwrap().values;
    let b = cosimo_layer(&triple, &p, Some(hi.spectra(1).unwrap())).unwrap().values;
    assert!((a - b).amax() < 1e-12);
}

#[test]
fn aggregation_modes() {
    let a = Cochain::new(1, DMatrix::from_row_slice(2, 2, &[1., 2., 3., 4.]));
    let b = Cochain::new(1, DMatrix::from_row_slice(2, 2, &[0., 1., 0., 1.]));
    let c = Cochain::new(1, DMatrix::from_row_slice(2, 2, &[-1., 0., 2., 0.]));
    assert_eq!(aggregate_branches(std::slice::from_ref(&a), &Aggregation::Sum).unwrap(), a);
    let s = aggregate_branches(&[a.clone(), b.clone(), c.clone()], &Aggregation::Sum).unwrap();
    assert_eq!(s.values, DMatrix::from_row_slice(2, 2, &[0., 3., 5., 5.]));

    // Concatenation followed by a map that picks the first branch.
    let mut w = DMatrix::zeros(6, 2);
    w[(0, 0)] = 1.0;
    w[(1, 1)] = 1.0;
    let mlp = Aggregation::Mlp(MlpAggregator { weight: w, bias: vec![0.5, 0.0], activation: Activation::Identity });
    let m = aggregate_branches(&[a.clone(), b, c], &mlp).unwrap();
    assert_eq!(m.values, DMatrix::from_row_slice(2, 2, &[1.5, 2., 3.5, 4.]));

    let wrong = Cochain::new(1, DMatrix::zeros(3, 2));
    assert!(aggregate_branches(&[a, wrong], &Aggregation::Sum).is_err());
    assert!(aggregate_branches(&[], &Aggregation::Sum).is_err());
}

fn level1_arch(widths: Vec<usize>, branches: usize, agg: network::AggregationKind, act: Activation) -> Architecture {
    Architecture {
        active_levels: vec![1],
        output_level: 1,
        widths,
        branches,
        aggregation: agg,
        activation: act,
        head: None,
        init_time: 0.8,
        shared_times: true,
    }
}

#[test]
fn single_layer_network_is_the_layer() {
    let c = small_complex(9);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(10);
    let net = Network::cosimo(&level1_arch(vec![2, 3], 1, Default::default(), Activation::Relu), &mut rng).unwrap();
    let x0 = randn(ctx.size(0), 2, &mut rng);
    let x1 = randn(ctx.size(1), 2, &mut rng);
    let x2 = randn(ctx.size(2), 2, &mut rng);
    let out = net.predict(&ctx, &[Signals::new(Some(x0.clone()), Some(x1.clone()), Some(x2.clone()))]).unwrap();
    let triple = project(&ctx, Some(&Cochain::new(0, x0)), &Cochain::new(1, x1), Some(&Cochain::new(2, x2))).unwrap();
    let LevelLayer::Cosimo(b) = &net.layers[0][&1] else { unreachable!() };
    let want = cosimo_layer(&triple, &b.branches[0], Some(ctx.spectra(1).unwrap())).unwrap();
    assert!((&out[0] - want.values).amax() < 1e-12);
}

#[test]
fn two_linear_layers_compose() {
    let c = small_complex(11);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(12);
    let mut net =
        Network::cosimo(&level1_arch(vec![2, 3, 2], 1, Default::default(), Activation::Identity), &mut rng).unwrap();
    for layer in &mut net.layers {
        for ll in layer.values_mut() {
            let LevelLayer::Cosimo(b) = ll else { unreachable!() };
            for p in &mut b.branches {
                p.tau_d = f64::NEG_INFINITY;
                p.tau_u = f64::NEG_INFINITY;
            }
        }
    }
    let x = randn(ctx.size(1), 2, &mut rng);
    let out = net.predict(&ctx, &[Signals::at(1, x.clone())]).unwrap();
    // With t = 0 and no neighbours each layer is X (Psi_d + Psi_u).
    let w = |l: usize| {
        let LevelLayer::Cosimo(b) = &net.layers[l][&1] else { unreachable!() };
        &b.branches[0].psi_d + &b.branches[0].psi_u
    };
    let want = &x * w(0) * w(1);
    assert!((&out[0] - want).amax() < 1e-12);
}

#[test]
fn deep_stack_keeps_shapes() {
    let c = small_complex(13);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(14);
    let arch = Architecture {
        active_levels: vec![0, 1, 2],
        output_level: 2,
        widths: vec![3; 101],
        branches: 1,
        aggregation: Default::default(),
        activation: Activation::Relu,
        head: Some(1),
        init_time: 1.0,
        shared_times: true,
    };
    let net = Network::cosimo(&arch, &mut rng).unwrap();
    let s = Signals::new(
        Some(randn(ctx.size(0), 3, &mut rng)),
        Some(randn(ctx.size(1), 3, &mut rng)),
        Some(randn(ctx.size(2), 3, &mut rng)),
    );
    let cache = net.forward(&ctx, &[s.clone(), s]).unwrap();
    for l in 0..=100 {
        for k in 0..3 {
            assert_eq!(cache.state(l, k).unwrap().shape(), (ctx.size(k), 6));
        }
    }
    assert_eq!(cache.outputs()[1].shape(), (ctx.size(2), 1));
}

/// Central differences with step `h` on every coordinate.
fn finite_difference(net: &Network, ctx: &ComplexContext, inputs: &[Signals], weights: &[DMatrix<f64>], h: f64) -> Vec<f64> {
    let objective = |n: &Network| -> f64 {
        n.predict(ctx, inputs).unwrap().iter().zip(weights).map(|(y, w)| y.dot(w)).sum()
    };
    let theta = net.flatten();
    (0..theta.len())
        .map(|i| {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut tp = theta.clone();
            tp[i] += h;
            plus.unflatten(&tp).unwrap();
            let mut tm = theta.clone();
            tm[i] -= h;
            minus.unflatten(&tm).unwrap();
            (objective(&plus) - objective(&minus)) / (2.0 * h)
        })
        .collect()
}

fn assert_gradients_match(net: &Network, ctx: &ComplexContext, inputs: &[Signals], seed: u64) {
    let mut rng = crate::rng::from_seed(seed);
    let cache = net.forward(ctx, inputs).unwrap();
    let weights: Vec<DMatrix<f64>> = cache.outputs().iter().map(|y| randn(y.nrows(), y.ncols(), &mut rng)).collect();
    let analytic = net.backward(ctx, &cache, &weights).unwrap();
    let numeric = finite_difference(net, ctx, inputs, &weights, 1e-5);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let scale = a.abs().max(n.abs()).max(1e-3);
        assert!((a - n).abs() <= 1e-5 * scale, "coordinate {i}: analytic {a} numeric {n}");
    }
}

#[test]
fn gradients_single_level_with_neighbours() {
    let c = small_complex(15);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(16);
    let mut arch = level1_arch(vec![2, 3], 2, network::AggregationKind::Mlp, Activation::leaky());
    arch.head = Some(2);
    let net = Network::cosimo(&arch, &mut rng).unwrap();
    let inputs: Vec<Signals> = (0..3)
        .map(|_| {
            Signals::new(
                Some(randn(ctx.size(0), 2, &mut rng)),
                Some(randn(ctx.size(1), 2, &mut rng)),
                Some(randn(ctx.size(2), 2, &mut rng)),
            )
        })
        .collect();
    assert_gradients_match(&net, &ctx, &inputs, 17);
}

#[test]
fn gradients_multi_level_two_layers() {
    let c = small_complex(18);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(19);
    let arch = Architecture {
        active_levels: vec![0, 1, 2],
        output_level: 1,
        widths: vec![2, 3, 2],
        branches: 2,
        aggregation: network::AggregationKind::Sum,
        activation: Activation::leaky(),
        head: None,
        init_time: 0.6,
        shared_times: true,
    };
    let net = Network::cosimo(&arch, &mut rng).unwrap();
    let inputs = vec![Signals::new(
        Some(randn(ctx.size(0), 2, &mut rng)),
        Some(randn(ctx.size(1), 2, &mut rng)),
        Some(randn(ctx.size(2), 2, &mut rng)),
    )];
    assert_gradients_match(&net, &ctx, &inputs, 20);

    let mut unshared = net.clone();
    unshared.shared_times = false;
    assert!(unshared.num_params() > net.num_params());
    assert_gradients_match(&unshared, &ctx, &inputs, 21);
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let c = small_complex(22);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(23);
    let net = Network::cosimo(&level1_arch(vec![2, 2], 3, Default::default(), Activation::Relu), &mut rng).unwrap();
    let cache = net.forward(&ctx, &[Signals::at(1, randn(ctx.size(1), 2, &mut rng))]).unwrap();
    let g = net.backward(&ctx, &cache, &[DMatrix::zeros(ctx.size(1), 2)]).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn time_gradient_vanishes_on_flat_spectrum() {
    // Isolated vertices: every Laplacian at level 0 is zero.
    let c = SimplicialComplex::new(&[0, 1, 2, 3], &[], &[], None).unwrap();
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(24);
    let arch = Architecture {
        active_levels: vec![0],
        output_level: 0,
        widths: vec![2, 2],
        branches: 1,
        aggregation: Default::default(),
        activation: Activation::Identity,
        head: None,
        init_time: 1.0,
        shared_times: true,
    };
    let net = Network::cosimo(&arch, &mut rng).unwrap();
    let cache = net.forward(&ctx, &[Signals::at(0, randn(4, 2, &mut rng))]).unwrap();
    let g = net.backward(&ctx, &cache, &[randn(4, 2, &mut rng)]).unwrap();
    let mask = net.time_mask();
    assert_eq!(mask.iter().filter(|&&m| m).count(), 2);
    for (gi, m) in g.iter().zip(mask) {
        if m {
            assert_eq!(*gi, 0.0);
        }
    }
}

#[test]
fn first_order_agreement_with_polynomial_layer() {
    let c = small_complex(25);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(26);
    let n = ctx.size(1);
    let triple = CochainTriple {
        own: Cochain::new(1, randn(n, 2, &mut rng)),
        lower_proj: randn(n, 2, &mut rng),
        upper_proj: randn(n, 2, &mut rng),
    };
    let base = CosimoParams::init(2, 2, 1.0, Activation::Identity, &mut rng);
    let ts = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
    let errs: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let p = base.clone().with_times(t, t);
            let cont = cosimo_layer(&triple, &p, Some(ctx.spectra(1).unwrap())).unwrap().values;
            let lin = |w: &DMatrix<f64>| vec![w.clone(), -w * t];
            let d = DiscreteParams {
                theta_d: lin(&p.theta_d),
                psi_d: lin(&p.psi_d),
                psi_u: lin(&p.psi_u),
                theta_u: lin(&p.theta_u),
                activation: Activation::Identity,
            };
            let disc = discrete_layer(&triple, &d, ctx.ops(1)).unwrap().values;
            (cont - disc).norm()
        })
        .collect();
    let slope = (errs[0] / errs[3]).ln() / (ts[0] / ts[3]).ln();
    assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
}

#[test]
fn training_basics() {
    // Isolated vertices make every filter the identity, so the model is
    // Y = X (Psi_d + Psi_u) and training is least squares in one scalar.
    let c = SimplicialComplex::new(&[0, 1, 2, 3, 4], &[], &[], None).unwrap();
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(27);
    let arch = Architecture {
        active_levels: vec![0],
        output_level: 0,
        widths: vec![1, 1],
        branches: 1,
        aggregation: Default::default(),
        activation: Activation::Identity,
        head: None,
        init_time: 1.0,
        shared_times: true,
    };
    let mut net = Network::cosimo(&arch, &mut rng).unwrap();
    let xs: Vec<DMatrix<f64>> = (0..4).map(|_| randn(5, 1, &mut rng)).collect();
    let ys: Vec<DMatrix<f64>> = xs.iter().map(|x| x * 1.7 + randn(5, 1, &mut rng) * 0.3).collect();
    let data = Dataset {
        inputs: xs.iter().map(|x| Signals::at(0, x.clone())).collect(),
        targets: ys.iter().map(|y| Target::Signal(y.clone())).collect(),
    };

    let before = net.flatten();
    let frozen = TrainConfig { step_size: 0.0, epochs: 5, ..TrainConfig::default() };
    let trace = train(&mut net, &ctx, &data, &Loss::MeanSquared, &frozen).unwrap();
    assert_eq!(net.flatten(), before);
    assert!(trace.losses.windows(2).all(|w| w[0] == w[1]));

    let cfg = TrainConfig { step_size: 0.1, epochs: 400, ..TrainConfig::default() };
    train(&mut net, &ctx, &data, &Loss::MeanSquared, &cfg).unwrap();
    let xx: f64 = xs.iter().map(|x| x.norm_squared()).sum();
    let xy: f64 = xs.iter().zip(&ys).map(|(x, y)| x.dot(y)).sum();
    let w_star = xy / xx;
    let LevelLayer::Cosimo(b) = &net.layers[0][&0] else { unreachable!() };
    let w = b.branches[0].psi_d[(0, 0)] + b.branches[0].psi_u[(0, 0)];
    assert!((w - w_star).abs() < 1e-6, "{w} vs {w_star}");
}

#[test]
fn divergence_is_reported() {
    let c = small_complex(28);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(29);
    let mut net = Network::cosimo(&level1_arch(vec![1, 4, 1], 1, Default::default(), Activation::Identity), &mut rng).unwrap();
    let x = randn(ctx.size(1), 1, &mut rng);
    let data = Dataset { inputs: vec![Signals::at(1, x.clone())], targets: vec![Target::Signal(x * 5.0)] };
    let cfg = TrainConfig { step_size: 1e6, epochs: 50, optimizer: Optimizer::GradientDescent, ..TrainConfig::default() };
    assert!(matches!(train(&mut net, &ctx, &data, &Loss::MeanSquared, &cfg), Err(Error::Diverged { .. })));
}

#[test]
fn cross_entropy_gradient_matches_differences() {
    let readout = DMatrix::from_row_slice(3, 2, &[1.0, -0.5, 0.2, 0.7, -1.0, 0.3]);
    let y = DMatrix::from_column_slice(2, 1, &[0.4, -0.9]);
    let loss = Loss::CandidateCrossEntropy { readout };
    let target = [Target::Choice { candidates: vec![0, 2], label: 2 }];
    let (_, g) = loss.evaluate(std::slice::from_ref(&y), &target).unwrap();
    for i in 0..2 {
        let mut p = y.clone();
        p[i] += 1e-6;
        let mut m = y.clone();
        m[i] -= 1e-6;
        let fd = (loss.evaluate(&[p], &target).unwrap().0 - loss.evaluate(&[m], &target).unwrap().0) / 2e-6;
        assert!((fd - g[0][i]).abs() < 1e-8);
    }
    let bad = [Target::Choice { candidates: vec![0, 2], label: 1 }];
    assert!(loss.evaluate(&[y], &bad).is_err());
}

#[test]
fn checkpoint_roundtrip() {
    let c = small_complex(30);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let mut rng = crate::rng::from_seed(31);
    let mut arch = level1_arch(vec![1, 3], 2, network::AggregationKind::Mlp, Activation::Relu);
    arch.head = Some(1);
    let net = Network::cosimo(&arch, &mut rng).unwrap();
    let ck = Checkpoint::new(&net, &ctx, &c);
    let json = serde_json::to_string(&ck).unwrap();
    let back: Checkpoint = serde_json::from_str(&json).unwrap();
    assert_eq!(back, ck);
    back.check_complex(&c).unwrap();
    assert!(back.check_complex(&small_complex(32)).is_err());
    assert_eq!(ck.modes[1], [ctx.size(1), ctx.size(1)]);
}

#[test]
fn spectra_sanity() {
    let c = small_complex(33);
    let ctx = ComplexContext::from_complex(&c).unwrap();
    let s = ctx.spectra(1).unwrap();
    let full = TruncatedSpectrum::full(&eig_sym(ctx.ops(1).up()).unwrap());
    assert_eq!(s.up.eigenvalues, full.eigenvalues);
}
