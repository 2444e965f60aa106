//! Analysis pipelines of the named experiments.

use super::config::{ExperimentConfig, ExperimentKind, GroupKind};
use super::report::Table;
use super::{train_ensemble, train_job, Sink, TrainedNet};
use crate::align;
use crate::data::Dataset;
use crate::dynamics;
use crate::equivariance::{self, AnalyticRainbowKernel, LayerKernels, SampledRainbowKernel};
use crate::error::{Error, Result};
use crate::kernel;
use crate::linalg::{self, Mat};
use crate::net::Network;
use crate::rainbow::{self, Classifier, RainbowModel};
use crate::rng;

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

pub(super) fn run(cfg: &ExperimentConfig, ds: &Dataset, sink: &mut Sink) -> Result<()> {
    match cfg.name {
        ExperimentKind::Convergence => convergence(cfg, ds, sink),
        ExperimentKind::Covariance => covariance(cfg, ds, sink),
        ExperimentKind::Spectra => spectra(cfg, ds, sink),
        ExperimentKind::KpcaApprox => kpca_approx(cfg, ds, sink),
        ExperimentKind::Gaussianity => gaussianity(cfg, ds, sink),
        ExperimentKind::Resample => resample(cfg, ds, sink),
        ExperimentKind::Dynamics => dynamics_run(cfg, ds, sink),
        ExperimentKind::Equivariance => equivariance_run(cfg, ds, sink),
    }
}

fn all_jobs(cfg: &ExperimentConfig, widths: &[usize]) -> Vec<(usize, u64)> {
    widths
        .iter()
        .flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s)))
        .collect()
}

fn train(cfg: &ExperimentConfig, ds: &Dataset, jobs: &[(usize, u64)], sink: &mut Sink) -> Result<Vec<TrainedNet>> {
    let nets = stage("training", train_ensemble(cfg, ds, jobs))?;
    let mut t = Table::new(
        "training.csv",
        "final metrics of every trained network",
        &[
            ("width", "neurons"),
            ("seed", "id"),
            ("train_accuracy", "fraction"),
            ("test_accuracy", "fraction"),
            ("final_loss", "nats"),
        ],
    );
    for n in &nets {
        t.push(vec![
            n.width.to_string(),
            n.seed.to_string(),
            num(n.metrics.train_accuracy),
            num(n.metrics.test_accuracy),
            num(n.metrics.epoch_loss.last().copied().unwrap_or(f64::NAN)),
        ]);
    }
    sink.emit(t)?;
    Ok(nets)
}

fn convergence(cfg: &ExperimentConfig, ds: &Dataset, sink: &mut Sink) -> Result<()> {
    let widths = cfg.architecture.widths();
    let nets = train(cfg, ds, &all_jobs(cfg, &widths), sink)?;
    let ref_width = cfg.reference_width();
    let reference = nets
        .iter()
        .find(|n| n.width == ref_width && n.seed == cfg.seeds[0])
        .expect("reference job scheduled");
    let train = ds.train();
    let test = ds.test();
    let ref_train = reference.net.forward(&train.inputs, None)?;
    let ref_test = reference.net.forward(&test.inputs, None)?;
    let mut t = Table::new(
        "convergence.csv",
        "test-split relative alignment error against the reference network",
        &[
            ("layer", "index"),
            ("width", "neurons"),
            ("seed", "id"),
            ("relative_error", "fraction"),
            ("similarity", "fraction"),
        ],
    );
    stage("alignment", (|| {
        for n in &nets {
            if n.width == ref_width && n.seed == cfg.seeds[0] {
                continue;
            }
            let hat_train = n.net.forward(&train.inputs, None)?;
            let hat_test = n.net.forward(&test.inputs, None)?;
            for j in 0..ref_train.len() {
                let a = align::procrustes_align(&ref_train[j], &hat_train[j])?;
                let err = align::alignment_error_on_split(&a, &ref_test[j], &hat_test[j])?;
                let sim = align::similarity_score(&ref_test[j], &hat_test[j])?;
                t.push(vec![
                    (j + 1).to_string(),
                    n.width.to_string(),
                    n.seed.to_string(),
                    num(err),
                    num(sim),
                ]);
            }
        }
        Ok(())
    })())?;
    sink.emit(t)
}

/// `(reference coordinates, bases, spectra)` of a reference network.
type RefCoords = Vec<(Mat, Mat, Vec<f64>)>;

fn coords_only(refs: &RefCoords) -> Vec<Mat> {
    refs.iter().map(|(c, _, _)| c.clone()).collect()
}

fn covariance(cfg: &ExperimentConfig, ds: &Dataset, sink: &mut Sink) -> Result<()> {
    let widths = cfg.architecture.widths();
    let max_width = cfg.architecture.max_width();
    let nets = train(cfg, ds, &all_jobs(cfg, &widths), sink)?;
    // The reference is trained separately so it is not a member of the
    // widest ensemble it is compared against.
    let ref_seed = rng::derive(cfg.seeds[0], "experiment", "covariance-reference");
    let reference = stage("training", train_job(cfg, ds, max_width, ref_seed))?;
    let train = ds.train();
    let mut t = Table::new(
        "covariance.csv",
        "operator-norm distance of aligned averaged covariances to the widest ensemble",
        &[
            ("layer", "index"),
            ("width", "neurons"),
            ("relative_distance", "fraction"),
        ],
    );
    stage("covariance", (|| {
        let refs = rainbow::reference_coordinates(&reference.net, &train.inputs)?;
        let coords = coords_only(&refs);
        let depth = coords.len();
        let mut averaged: Vec<(usize, Vec<Mat>)> = Vec::new();
        for &w in &widths {
            let mut lists: Vec<Vec<Mat>> = vec![Vec::new(); depth];
            for n in nets.iter().filter(|n| n.width == w) {
                let (covs, _) = rainbow::aligned_estimates(&coords, &n.net, &train.inputs)?;
                for (j, c) in covs.into_iter().enumerate() {
                    lists[j].push(c);
                }
            }
            let avg = lists
                .iter()
                .map(|l| rainbow::average_covariances(l))
                .collect::<Result<Vec<_>>>()?;
            averaged.push((w, avg));
        }
        let target = &averaged.iter().find(|(w, _)| *w == max_width).expect("max width").1;
        for (w, avg) in &averaged {
            if *w == max_width {
                continue;
            }
            for j in 0..depth {
                let denom = linalg::operator_norm(&target[j])?;
                if denom <= 0.0 {
                    return Err(Error::Degenerate(format!("zero target covariance at layer {}", j + 1)));
                }
                let d = linalg::operator_norm(&(&avg[j] - &target[j]))? / denom;
                t.push(vec![(j + 1).to_string(), w.to_string(), num(d)]);
            }
        }
        Ok(())
    })())?;
    sink.emit(t)
}

fn spectra(cfg: &ExperimentConfig, ds: &Dataset, sink: &mut Sink) -> Result<()> {
    let widths = cfg.architecture.widths();
    let jobs: Vec<(usize, u64)> = widths.iter().map(|&w| (w, cfg.seeds[0])).collect();
    let nets = train(cfg, ds, &jobs, sink)?;
    let train = ds.train();
    let mut spec = Table::new(
        "spectra.csv",
        "eigenvalues of the uncentered train activation covariance",
        &[
            ("layer", "index"),
            ("width", "neurons"),
            ("rank", "index"),
            ("eigenvalue", "activation²"),
        ],
    );
    let mut fits = Table::new(
        "spectra_fit.csv",
        "power-law fits λ_m ≈ e^b m^(−α) over the default rank range",
        &[
            ("layer", "index"),
            ("width", "neurons"),
            ("alpha", "exponent"),
            ("intercept", "log activation²"),
            ("fit_low", "rank"),
            ("fit_high", "rank"),
            ("fit_residual", "log activation²"),
        ],
    );
    let mut wspec = Table::new(
        "weight_spectra.csv",
        "eigenvalues of the empirical weight covariance WᵀW/d",
        &[
            ("layer", "index"),
            ("width", "neurons"),
            ("rank", "index"),
            ("eigenvalue", "weight²"),
        ],
    );
    stage("spectra", (|| {
        for n in &nets {
            let acts = n.net.forward(&train.inputs, None)?;
            for (j, a) in acts.iter().enumerate() {
                let layer = (j + 1).to_string();
                let k = kernel::kpca(a, Some(0))?;
                for (m, v) in k.spectrum.iter().enumerate() {
                    spec.push(vec![layer.clone(), n.width.to_string(), (m + 1).to_string(), num(*v)]);
                }
                let row = match kernel::powerlaw_fit(&k.spectrum, None) {
                    Ok(f) => vec![
                        num(f.alpha),
                        num(f.intercept),
                        f.fit_range.0.to_string(),
                        f.fit_range.1.to_string(),
                        num(f.fit_residual),
                    ],
                    Err(_) => {
                        let (lo, hi) = kernel::default_fit_range(k.spectrum.len());
                        vec![num(f64::NAN), num(f64::NAN), lo.to_string(), hi.to_string(), num(f64::NAN)]
                    }
                };
                let mut full = vec![layer.clone(), n.width.to_string()];
                full.extend(row);
                fits.push(full);
                let c = rainbow::estimate_layer_covariance(n.net.weights(j));
                for (m, v) in linalg::sym_eigen(&c)?.values.iter().enumerate() {
                    wspec.push(vec![layer.clone(), n.width.to_string(), (m + 1).to_string(), num(*v)]);
                }
            }
        }
        Ok(())
    })())?;
    sink.emit(spec)?;
    sink.emit(wspec)?;
    sink.emit(fits)
}

fn kpca_approx(cfg: &ExperimentConfig, ds: &Dataset, sink: &mut Sink) -> Result<()> {
    let width = cfg.reference_width();
    let jobs: Vec<(usize, u64)> = cfg.seeds.iter().map(|&s| (width, s)).collect();
    let nets = train(cfg, ds, &jobs, sink)?;
    let train = ds.train();
    let test = ds.test();
    let mut t = Table::new(
        "kpca_approx.csv",
        "weights projected on the leading r directions of a basis",
        &[
            ("layer", "index"),
            ("seed", "id"),
            ("basis", "pca|kpca|random"),
            ("rank", "directions"),
            ("variance_fraction", "fraction"),
            ("test_accuracy", "fraction"),
        ],
    );
    stage("projection", (|| {
        for n in &nets {
            let mut inputs = train.inputs.clone();
            let acts = n.net.forward(&train.inputs, None)?;
            for j in 0..n.net.depth() {
                let w = n.net.weights(j);
                let d = w.ncols();
                let pca = linalg::sym_eigen(&rainbow::estimate_layer_covariance(w))?.vectors;
                // Unsupervised: principal directions of the layer input.
                let kpca = kernel::kpca(&inputs, None)?.basis;
                let mut r = rng::stream(n.seed, "experiment", "random-basis", j as u64);
                let random = linalg::random_orthonormal_columns(d, d, &mut r);
                for (name, basis) in [("pca", &pca), ("kpca", &kpca), ("random", &random)] {
                    for &rank in cfg.analysis.projection_ranks.iter().filter(|&&r| r <= d) {
                        let (proj, frac) = rainbow::project_weights_rank(w, basis, rank)?;
                        let mut p = n.net.with_layer_weights(j, proj)?;
                        if p.norm_stats().is_some() {
                            p.fit_norm_stats(&train.inputs)?;
                        }
                        let acc = if test.is_empty() { f64::NAN } else { p.accuracy(&test)? };
                        t.push(vec![
                            (j + 1).to_string(),
                            n.seed.to_string(),
                            name.to_string(),
                            rank.to_string(),
                            num(frac),
                            num(acc),
                        ]);
                    }
                }
                inputs = acts[j].clone();
            }
        }
        Ok(())
    })())?;
    sink.emit(t)
}

fn gaussianity(cfg: &ExperimentConfig, ds: &Dataset, sink: &mut Sink) -> Result<()> {
    let width = cfg.reference_width();
    let jobs: Vec<(usize, u64)> = cfg.seeds.iter().map(|&s| (width, s)).collect();
    let nets = train(cfg, ds, &jobs, sink)?;
    let train = ds.train();
    let mut mp = Table::new(
        "mp.csv",
        "Marchenko-Pastur comparison of whitened weights",
        &[
            ("layer", "index"),
            ("seed", "id"),
            ("gamma", "ratio"),
            ("sigma2", "weight²"),
            ("lambda_minus", "weight²"),
            ("lambda_plus", "weight²"),
            ("outlier_fraction", "fraction"),
            ("n_above", "count"),
            ("effective_rank", "count"),
        ],
    );
    let mut hist = Table::new(
        "mp_histogram.csv",
        "eigenvalue histogram of whitened weights against the Marchenko-Pastur density",
        &[
            ("layer", "index"),
            ("seed", "id"),
            ("low", "weight²"),
            ("high", "weight²"),
            ("empirical_density", "1/weight²"),
            ("mp_density", "1/weight²"),
        ],
    );
    let mut marg = Table::new(
        "marginals.csv",
        "KS test of standardized weight projections on covariance eigenvectors, pooled over networks",
        &[
            ("layer", "index"),
            ("rank", "index"),
            ("status", "ok|skipped"),
            ("n", "count"),
            ("ks", "statistic"),
            ("critical", "statistic"),
            ("gaussian", "bool"),
        ],
    );
    stage("gaussianity", (|| {
        let srcs: Vec<&Network> = nets.iter().map(|n| &n.net).collect();
        let model = RainbowModel::build(&nets[0].net, &srcs, &train.inputs)?;
        let refs = rainbow::reference_coordinates(&model.reference, &train.inputs)?;
        let coords = coords_only(&refs);
        let depth = model.depth();
        let mut pooled: Vec<Option<Mat>> = vec![None; depth];
        for n in &nets {
            let rotations = rainbow::align_to_reference(&coords, &n.net, &train.inputs)?;
            for j in 0..depth {
                let w = n.net.weights(j);
                let c = &model.layers[j].covariance;
                let (c_hat, w_ref) = if j == 0 {
                    (c.clone(), w.clone())
                } else {
                    let a = &rotations[j - 1];
                    (linalg::symmetrize(&(a.transpose() * c * a)), w * a.transpose())
                };
                let g = rainbow::whiten_weights(w, &c_hat, rainbow::WHITEN_CUTOFF)?;
                let rep = rainbow::mp_spectrum_test(&g.matrix, None, cfg.analysis.mp_margin)?;
                let layer = (j + 1).to_string();
                mp.push(vec![
                    layer.clone(),
                    n.seed.to_string(),
                    num(rep.gamma),
                    num(rep.sigma2),
                    num(rep.edges.0),
                    num(rep.edges.1),
                    num(rep.outlier_fraction),
                    rep.n_above.to_string(),
                    g.effective_rank.to_string(),
                ]);
                for b in &rep.histogram {
                    hist.push(vec![
                        layer.clone(),
                        n.seed.to_string(),
                        num(b.low),
                        num(b.high),
                        num(b.empirical_density),
                        num(b.mp_density),
                    ]);
                }
                pooled[j] = Some(match pooled[j].take() {
                    None => w_ref,
                    Some(p) => {
                        let mut s = Mat::zeros(p.nrows() + w_ref.nrows(), p.ncols());
                        s.rows_mut(0, p.nrows()).copy_from(&p);
                        s.rows_mut(p.nrows(), w_ref.nrows()).copy_from(&w_ref);
                        s
                    }
                });
            }
        }
        for (j, w) in pooled.into_iter().enumerate() {
            let w = w.expect("non-empty ensemble");
            let eig = linalg::sym_eigen(&model.layers[j].covariance)?;
            let ranks: Vec<usize> = cfg
                .analysis
                .marginal_ranks
                .iter()
                .copied()
                .filter(|&r| r <= eig.values.len())
                .collect();
            for m in rainbow::gaussianity_marginals(&w, &eig.vectors, &eig.values, &ranks)? {
                let ok = m.status == rainbow::MarginalStatus::Ok;
                marg.push(vec![
                    (j + 1).to_string(),
                    m.rank.to_string(),
                    if ok { "ok" } else { "skipped" }.into(),
                    m.projections.len().to_string(),
                    num(m.ks),
                    num(m.critical),
                    m.gaussian.to_string(),
                ]);
            }
        }
        Ok(())
    })())?;
    sink.emit(marg)?;
    sink.emit(hist)?;
    sink.emit(mp)
}

fn resample(cfg: &ExperimentConfig, ds: &Dataset, sink: &mut Sink) -> Result<()> {
    let widths = cfg.architecture.widths();
    let ref_width = cfg.reference_width();
    let nets = train(cfg, ds, &all_jobs(cfg, &widths), sink)?;
    let train_part = ds.train();
    let test = ds.test();
    let mut t = Table::new(
        "resample.csv",
        "test accuracy of trained and sampled Gaussian rainbow networks",
        &[
            ("width", "neurons"),
            ("trained_accuracy", "fraction"),
            ("sampled_realign_accuracy", "fraction"),
            ("sampled_retrain_accuracy", "fraction"),
            ("chance", "fraction"),
        ],
    );
    stage("resample", (|| {
        let ensemble: Vec<&Network> = nets.iter().filter(|n| n.width == ref_width).map(|n| &n.net).collect();
        let model = RainbowModel::build(ensemble[0], &ensemble, &train_part.inputs)?;
        let model_dir = cfg.output_dir.join("model");
        model.save(&model_dir)?;
        super::save_model_dataset(&model_dir, cfg)?;
        let mut counts = vec![0usize; ds.n_classes()];
        for &y in &test.labels {
            counts[y] += 1;
        }
        let chance = *counts.iter().max().unwrap_or(&0) as f64 / test.len().max(1) as f64;
        let depth = model.depth();
        for &w in widths.iter().filter(|&&w| w <= ref_width) {
            let trained: Vec<f64> = nets.iter().filter(|n| n.width == w).map(|n| n.metrics.test_accuracy).collect();
            let mut acc = [0.0; 2];
            for k in 0..cfg.analysis.sample_draws {
                let seed = rng::derive(cfg.seeds[0], "experiment", &format!("sample-w{w}-d{k}"));
                for (i, c) in [Classifier::Realign, Classifier::Retrain].into_iter().enumerate() {
                    let (_, m) = rainbow::sample_rainbow_network(&model, &vec![w; depth], ds, seed, c)?;
                    acc[i] += m.test_accuracy / cfg.analysis.sample_draws as f64;
                }
            }
            t.push(vec![
                w.to_string(),
                num(trained.iter().sum::<f64>() / trained.len() as f64),
                num(acc[0]),
                num(acc[1]),
                num(chance),
            ]);
        }
        Ok(())
    })())?;
    sink.emit(t)
}

fn dynamics_run(cfg: &ExperimentConfig, ds: &Dataset, sink: &mut Sink) -> Result<()> {
    let width = cfg.reference_width();
    let jobs: Vec<(usize, u64)> = cfg.seeds.iter().map(|&s| (width, s)).collect();
    let nets = train(cfg, ds, &jobs, sink)?;
    let mut series = Table::new(
        "dynamics.csv",
        "amplification and cosine of neuron projections on the final covariance eigenbasis",
        &[
            ("seed", "id"),
            ("layer", "index"),
            ("rank", "index"),
            ("epoch", "epoch"),
            ("amplification", "ratio"),
            ("cosine", "cosine"),
            ("residual", "fraction"),
        ],
    );
    let mut resid = Table::new(
        "dynamics_residual.csv",
        "pure-amplification reconstruction residual against the no-motion baseline",
        &[
            ("seed", "id"),
            ("layer", "index"),
            ("epoch", "epoch"),
            ("residual", "fraction"),
            ("baseline_residual", "fraction"),
        ],
    );
    stage("dynamics", (|| {
        for n in &nets {
            for layer in 1..=n.net.depth() {
                let d = n.net.weights(layer - 1).ncols();
                let ranks: Vec<usize> = (1..=cfg.analysis.dynamics_ranks.min(d)).collect();
                let rep = dynamics::analyze_layer(&n.trajectory, layer, Some(&ranks))?;
                for s in &rep.series {
                    for (t, &epoch) in rep.epochs.iter().enumerate() {
                        series.push(vec![
                            n.seed.to_string(),
                            layer.to_string(),
                            s.rank.to_string(),
                            epoch.to_string(),
                            s.amplification.get(t).map(|v| num(*v)).unwrap_or_default(),
                            s.cosine.get(t).copied().flatten().map(num).unwrap_or_default(),
                            num(rep.residuals[t]),
                        ]);
                    }
                }
                for (t, &epoch) in rep.epochs.iter().enumerate() {
                    resid.push(vec![
                        n.seed.to_string(),
                        layer.to_string(),
                        epoch.to_string(),
                        num(rep.residuals[t]),
                        num(rep.baseline_residuals[t]),
                    ]);
                }
            }
        }
        Ok(())
    })())?;
    sink.emit(series)?;
    sink.emit(resid)
}

fn build_group(kind: GroupKind, d: usize, cfg: &ExperimentConfig) -> Result<equivariance::FiniteGroup> {
    let gens: Vec<Mat> = match kind {
        GroupKind::SignFlip => (0..cfg.analysis.flip_coords.min(d))
            .map(|k| equivariance::sign_flip(d, k))
            .collect(),
        GroupKind::CyclicShift => vec![equivariance::cyclic_shift(d)],
    };
    if gens.is_empty() {
        return Ok(equivariance::FiniteGroup::trivial(d));
    }
    equivariance::close_group(&gens, cfg.analysis.max_group_order)
}

fn group_name(kind: GroupKind) -> &'static str {
    match kind {
        GroupKind::SignFlip => "sign_flip",
        GroupKind::CyclicShift => "cyclic_shift",
    }
}

fn equivariance_run(cfg: &ExperimentConfig, ds: &Dataset, sink: &mut Sink) -> Result<()> {
    let width = cfg.architecture.base_width;
    let nets = train(cfg, ds, &[(width, cfg.seeds[0])], sink)?;
    let c1 = rainbow::estimate_layer_covariance(nets[0].net.weights(0));
    let depth = cfg.architecture.depth;
    let seed = rng::derive(cfg.seeds[0], "experiment", "equivariance");
    let mut t = Table::new(
        "equivariance.csv",
        "maximum relative kernel deviation over group elements and point pairs",
        &[
            ("group", "name"),
            ("kind", "analytic|sampled"),
            ("width", "neurons (0 = infinite)"),
            ("layer", "index"),
            ("max_deviation", "fraction of mean k(x,x)"),
        ],
    );
    let mut elements = Table::new(
        "equivariance_elements.csv",
        "kernel deviation per group element, analytic and first draw at the widest width",
        &[
            ("group", "name"),
            ("kind", "analytic|sampled"),
            ("width", "neurons (0 = infinite)"),
            ("layer", "index"),
            ("element", "index"),
            ("deviation", "fraction of mean k(x,x)"),
        ],
    );
    stage("equivariance", (|| {
        let widest = cfg.analysis.equivariance_widths.iter().copied().max().unwrap_or(0);
        for &kind in &cfg.analysis.groups {
            let group = build_group(kind, c1.nrows(), cfg)?;
            let c_sym = equivariance::symmetrize_covariance(&c1, &group)?;
            let gname = group_name(kind);
            let analytic = AnalyticRainbowKernel { c1: c_sym.clone(), depth };
            let rep = equivariance::test_kernel_invariance(&analytic, &group, cfg.analysis.n_pairs, seed)?;
            for (j, v) in rep.max_deviation.iter().enumerate() {
                t.push(vec![gname.into(), "analytic".into(), "0".into(), (j + 1).to_string(), num(*v)]);
            }
            for (l, e, v) in &rep.table {
                elements.push(vec![gname.into(), "analytic".into(), "0".into(), l.to_string(), e.to_string(), num(*v)]);
            }
            for &w in &cfg.analysis.equivariance_widths {
                let mut mean = vec![0.0; depth];
                for k in 0..cfg.analysis.equivariance_draws {
                    let ds = rng::derive(seed, "equivariance", &format!("{gname}-w{w}-d{k}"));
                    let model = SampledRainbowKernel::sample(&c_sym, w, depth, ds)?;
                    debug_assert_eq!(model.depth(), depth);
                    let rep = equivariance::test_kernel_invariance(&model, &group, cfg.analysis.n_pairs, seed)?;
                    for (j, v) in rep.max_deviation.iter().enumerate() {
                        mean[j] += v / cfg.analysis.equivariance_draws as f64;
                    }
                    if k == 0 && w == widest {
                        for (l, e, v) in &rep.table {
                            elements.push(vec![
                                gname.into(),
                                "sampled".into(),
                                w.to_string(),
                                l.to_string(),
                                e.to_string(),
                                num(*v),
                            ]);
                        }
                    }
                }
                for (j, v) in mean.iter().enumerate() {
                    t.push(vec![gname.into(), "sampled".into(), w.to_string(), (j + 1).to_string(), num(*v)]);
                }
            }
        }
        Ok(())
    })())?;
    sink.emit(elements)?;
    sink.emit(t)
}
